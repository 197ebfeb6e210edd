//! Mutator executable harness: program on stdin, mutated program on stdout.
//! Exit 0 = mutated, 10 = no matching site, anything else = error.

mod generated;
mod mutator;

use std::io::{Read, Write};
use std::process::ExitCode;

use mutator::Mutator;
use rand::SeedableRng;

fn main() -> ExitCode {
    let mut src = String::new();
    if std::io::stdin().read_to_string(&mut src).is_err() {
        eprintln!("cannot read stdin");
        return ExitCode::from(2);
    }
    let mut file = match syn::parse_file(&src) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("parse error: {e}");
            return ExitCode::from(2);
        }
    };
    let seed = std::env::var("MUT_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0u64);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    if !generated::Mutator_.mutate(&mut file, &mut rng) {
        return ExitCode::from(10);
    }
    let out = prettyplease::unparse(&file);
    if std::io::stdout().write_all(out.as_bytes()).is_err() {
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}
