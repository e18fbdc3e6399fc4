mod args;
mod commands;
mod config;
mod error;

use std::ffi::OsString;
use std::sync::Arc;

use clap::Parser;

use args::Cli;
use error::{classify, UsageError, EXIT_OK, EXIT_USAGE};
use sift_core::memory::{parse_size, MemoryGauge};

fn threads(flag: Option<usize>) -> anyhow::Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("SIFT_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| UsageError(format!("SIFT_THREADS must be a thread count, got {v:?}")).into()),
        _ => Ok(num_cpus::get_physical()),
    }
}

/// Peak resident set size in bytes, where the platform reports it.
fn peak_rss() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.global.print_config {
        print!("{}", config::render(&cli)?);
        return Ok(());
    }
    let n = threads(cli.global.threads)?;
    if n == 0 {
        return Err(UsageError("--threads must be at least 1".into()).into());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow::anyhow!("cannot start the thread pool: {e}"))?;
    let gauge = match &cli.global.memory_cap {
        Some(s) => MemoryGauge::with_cap(
            parse_size(s).ok_or_else(|| UsageError(format!("--memory-cap: cannot parse {s:?}")))?,
        ),
        None => MemoryGauge::unbounded(),
    };
    let resolved = serde_json::json!({
        "command": cli.command.name(),
        "threads": n,
        "parallel": sift_core::par::is_parallel(),
        "global": &cli.global,
        "args": &cli.command,
    });
    log::info!("resolved config: {resolved}");
    let gauge = Arc::new(gauge);
    let started = std::time::Instant::now();
    let result = commands::dispatch(&cli.command, gauge.clone());
    log::info!(
        "{} finished in {:.3}s; accounted memory {} bytes; peak resident memory {} bytes",
        cli.command.name(),
        started.elapsed().as_secs_f64(),
        gauge.used(),
        peak_rss().map_or("unknown".to_string(), |b| b.to_string())
    );
    result
}

fn main() {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let code = match config::merge(argv) {
        Err(e) => report(e),
        Ok(argv) => match Cli::try_parse_from(argv) {
            Err(e) => {
                let _ = e.print();
                if e.use_stderr() {
                    EXIT_USAGE
                } else {
                    EXIT_OK
                }
            }
            Ok(cli) => {
                env_logger::Builder::new()
                    .parse_filters(&cli.global.log_level)
                    .format_timestamp_millis()
                    .init();
                match run(cli) {
                    Ok(()) => EXIT_OK,
                    Err(e) => report(e),
                }
            }
        },
    };
    std::process::exit(code);
}

fn report(e: anyhow::Error) -> i32 {
    let r = classify(&e);
    eprintln!("{}", serde_json::json!({ "error": r }));
    r.code
}
