use serde::{Deserialize, Serialize};

use super::AgentRole;

/// One chat call with its accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub role: AgentRole,
    /// Workflow round the call belongs to; 0 for calls outside the loop.
    pub round: u32,
    pub system_prompt: String,
    pub user_message: String,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Seconds.
    pub latency: f64,
    pub backend_id: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Seconds spent waiting on the backend.
    pub wall_time: f64,
}

impl UsageTotals {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageLedger {
    exchanges: Vec<ChatExchange>,
    totals: UsageTotals,
}

impl UsageLedger {
    pub fn record(&mut self, exchange: ChatExchange) {
        self.totals.prompt_tokens += exchange.prompt_tokens;
        self.totals.completion_tokens += exchange.completion_tokens;
        self.totals.wall_time += exchange.latency;
        self.exchanges.push(exchange);
    }

    pub fn exchanges(&self) -> &[ChatExchange] {
        &self.exchanges
    }

    pub fn totals(&self) -> UsageTotals {
        self.totals
    }

    /// Whether the running totals equal the sums over the exchanges.
    pub fn is_conserved(&self) -> bool {
        let prompt: u64 = self.exchanges.iter().map(|e| e.prompt_tokens).sum();
        let completion: u64 = self.exchanges.iter().map(|e| e.completion_tokens).sum();
        let wall: f64 = self.exchanges.iter().map(|e| e.latency).sum();
        prompt == self.totals.prompt_tokens
            && completion == self.totals.completion_tokens
            && (wall - self.totals.wall_time).abs() <= 1e-9 * wall.max(1.0)
    }

    pub fn calls_in_round(&self, round: u32) -> usize {
        self.exchanges.iter().filter(|e| e.round == round).count()
    }
}
