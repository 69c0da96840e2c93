use depprobe_cli::{configure_threads, run_from, THREADS_ENV};

fn main() {
    if let Err(e) = configure_threads(std::env::var(THREADS_ENV).ok().as_deref()) {
        eprintln!("error: {}", e);
        std::process::exit(e.exit_code());
    }
    std::process::exit(run_from(std::env::args_os()));
}
