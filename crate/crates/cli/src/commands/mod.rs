//! One function per subcommand.

mod data;
mod model;
mod net;

use std::path::{Path, PathBuf};

use crate::args::{Cli, Command, DataArgs};
use crate::config::Resolver;
use crate::error::{CliError, CliResult};
use crate::manifest::verify_input;
use twotower_core::ingest::DanglingPolicy;

pub fn run(cli: Cli) -> CliResult<()> {
    let mut r = Resolver::new(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => data::synth(&mut r, a),
        Command::BuildVocab(a) => data::build_vocab(&mut r, a),
        Command::Train(a) => model::train(&mut r, a),
        Command::BuildIndex(a) => model::build_index(&mut r, a),
        Command::Export(a) => model::export(&mut r, a),
        Command::Eval(a) => net::eval(&mut r, a),
        Command::Serve(a) => net::serve(&mut r, a),
        Command::Proxy(a) => net::proxy(&mut r, a),
        Command::Bench(a) => net::bench(&mut r, a),
    }
}

pub(crate) struct DataPaths {
    pub users: PathBuf,
    pub items: PathBuf,
    pub interactions: PathBuf,
    pub policy: DanglingPolicy,
}

impl DataPaths {
    pub fn resolve(r: &mut Resolver, a: DataArgs) -> CliResult<Self> {
        let dir: Option<PathBuf> = r.optional("data", a.data)?;
        let pick = |r: &mut Resolver, name: &str, flag: Option<PathBuf>, file: &str| -> CliResult<PathBuf> {
            let v: Option<PathBuf> = r.optional(name, flag)?;
            v.or_else(|| dir.as_ref().map(|d| d.join(file)))
                .ok_or_else(|| CliError::Usage(format!("--{name} or --data is required")))
        };
        let users = pick(r, "users", a.users, "users.tsv")?;
        let items = pick(r, "items", a.items, "items.tsv")?;
        let interactions = pick(r, "interactions", a.interactions, "interactions.tsv")?;
        let strict = r.get("strict", a.strict, false)?;
        for p in [&users, &items, &interactions] {
            verify_input(p)?;
        }
        Ok(Self {
            users,
            items,
            interactions,
            policy: if strict { DanglingPolicy::Strict } else { DanglingPolicy::Skip },
        })
    }

    pub fn all(&self) -> [&Path; 3] {
        [&self.users, &self.items, &self.interactions]
    }
}
