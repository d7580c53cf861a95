use anyhow::Result;
use maskcap::dataset::{synthetic_fixture, FixtureOptions};
use maskcap::error::Error;

use crate::manifest::{write_json, Run};
use crate::{Status, SynthArgs};

pub fn run(args: &SynthArgs) -> Result<Status> {
    let sizes = args
        .sizes
        .split(',')
        .map(|s| s.trim().parse::<usize>().ok().filter(|&v| v > 0))
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| Error::Config(format!("--sizes must be positive integers, got {:?}", args.sizes)))?;
    let mut run = Run::start(&args.out, "synth", None, Some(args.seed), &[])?;
    let fixture = synthetic_fixture(&FixtureOptions {
        records: args.records,
        seed: args.seed,
        sizes,
        ..FixtureOptions::default()
    });
    fixture.write(&args.out)?;
    run.output("dataset.jsonl");
    run.output("images");
    write_json(&run.output("counts.json"), &fixture.counts)?;
    println!(
        "{} captions, {} images, {} entities",
        fixture.counts.captions, fixture.counts.images, fixture.counts.entities
    );
    run.finish("ok")?;
    Ok(Status::Complete)
}
