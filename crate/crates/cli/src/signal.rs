//! Shutdown signals.

/// Resolves on the first SIGINT or SIGTERM.
pub async fn shutdown() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = match signal(SignalKind::terminate()) {
            Ok(s) => s,
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
                return;
            }
        };
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

/// Asks a child process to stop the way an operator would.
pub fn terminate(child: &std::process::Child) {
    // SAFETY: kill(2) with a pid we spawned and have not yet reaped.
    unsafe {
        libc::kill(child.id() as libc::pid_t, libc::SIGTERM);
    }
}

/// Resolves once `worker` has returned.
pub async fn thread_finished<T>(worker: &std::thread::JoinHandle<T>) {
    while !worker.is_finished() {
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
}
