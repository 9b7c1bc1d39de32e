mod args;
mod commands;

use clap::error::ErrorKind;
use clap::Parser;

use args::{parse_config_file, Cli, Command};
use commands::{CliError, CliKind, Resolver};

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let first_line = e
                .to_string()
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("bad arguments")
                .to_string();
            eprintln!("error[usage]: {}", first_line);
            return 2;
        }
    };

    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.tag(), e.msg);
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file_map = match &cli.config {
        None => Default::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read config {:?}: {}", path, e))
            })?;
            parse_config_file(&text).map_err(CliError::config)?
        }
    };
    let resolver = Resolver::new(file_map);

    let threads = match resolver.get_opt(cli.threads, "threads")? {
        Some(n) => Some(n),
        None => std::env::var("STCONV_THREADS")
            .ok()
            .map(|v| {
                v.parse::<usize>().map_err(|_| {
                    CliError::config(format!("STCONV_THREADS has bad value {:?}", v))
                })
            })
            .transpose()?,
    };
    let seed = resolver.get(cli.seed, "seed", 42)?;

    let body = move || -> Result<(), CliError> {
        match &cli.command {
            Command::GenSynth(a) => commands::gen_synth(a, &resolver, seed),
            Command::Describe(a) => commands::describe(a, &resolver),
            Command::Finetune(a) => commands::finetune_cmd(a, &resolver, seed),
            Command::Extract(a) => commands::extract(a, &resolver, seed),
            Command::TrainSvm(a) => commands::train_svm(a, &resolver, seed),
            Command::Predict(a) => commands::predict(a, &resolver, seed),
            Command::Eval(a) => commands::eval(a, &resolver, seed),
            Command::Project(a) => commands::project(a, &resolver, seed),
            Command::Bench(a) => commands::bench(a, &resolver, seed),
        }
    };

    match threads {
        None => body(),
        Some(n) => {
            if n == 0 {
                return Err(CliError::config("--threads must be >= 1".to_string()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError {
                    kind: CliKind::Runtime,
                    msg: format!("cannot build thread pool: {}", e),
                })?;
            pool.install(body)
        }
    }
}
