use std::ffi::OsString;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

pub(crate) struct ProcessSpec<'a> {
    pub program: &'a str,
    pub args: &'a [OsString],
    pub cwd: &'a Path,
    pub timeout: Duration,
    pub kill_grace: Duration,
}

pub(crate) struct Finished {
    pub success: bool,
    pub code: Option<i32>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub timed_out: bool,
}

const POLL: Duration = Duration::from_millis(5);

/// Spawns the process in its own process group, enforces the timeout with
/// SIGTERM then SIGKILL after the grace period, and reaps the whole group.
pub(crate) fn run_process(spec: &ProcessSpec<'_>) -> std::io::Result<Finished> {
    let mut child = Command::new(spec.program)
        .args(spec.args)
        .current_dir(spec.cwd)
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONIOENCODING", "utf-8")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()?;
    let pgid = child.id() as i32;
    let stdout = drain(child.stdout.take());
    let stderr = drain(child.stderr.take());

    let deadline = Instant::now() + spec.timeout;
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if Instant::now() >= deadline {
            timed_out = true;
            break terminate(&mut child, pgid, spec.kill_grace)?;
        }
        thread::sleep(POLL);
    };
    // Stragglers left in the group would keep the pipes open.
    signal_group(pgid, libc::SIGKILL);

    Ok(Finished {
        success: status.success(),
        code: status.code().or_else(|| status.signal().map(|s| 128 + s)),
        stdout: stdout.join().unwrap_or_default(),
        stderr: stderr.join().unwrap_or_default(),
        timed_out,
    })
}

fn terminate(
    child: &mut Child,
    pgid: i32,
    grace: Duration,
) -> std::io::Result<std::process::ExitStatus> {
    signal_group(pgid, libc::SIGTERM);
    let grace_end = Instant::now() + grace;
    while Instant::now() < grace_end {
        if let Some(status) = child.try_wait()? {
            return Ok(status);
        }
        thread::sleep(POLL);
    }
    signal_group(pgid, libc::SIGKILL);
    child.wait()
}

fn signal_group(pgid: i32, signal: i32) {
    // SAFETY: kill(2) on a negative pid signals the process group; ESRCH for
    // an already-empty group is harmless.
    unsafe {
        libc::kill(-pgid, signal);
    }
}

fn drain<R: Read + Send + 'static>(stream: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut s) = stream {
            let _ = s.read_to_end(&mut buf);
        }
        buf
    })
}
