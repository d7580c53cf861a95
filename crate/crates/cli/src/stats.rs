use anyhow::Result;
use maskcap::dataset::{dataset_stats, load_samples, StatsOptions};

use crate::manifest::{write_json, Run};
use crate::{plots, Status, StatsArgs};

pub fn run(args: &StatsArgs) -> Result<Status> {
    let samples = load_samples(&args.dataset)?.into_strict()?;
    let mut run = Run::start(&args.out, "stats", None, None, std::slice::from_ref(&args.dataset))?;
    let report = dataset_stats(&samples, &StatsOptions::default());
    write_json(&run.output("stats.json"), &report)?;

    let names: Vec<String> = report.attributes.iter().map(|a| a.name.clone()).collect();
    let counts: Vec<usize> = report.attributes.iter().map(|a| a.count).collect();
    plots::bar_chart(&run.output("attributes.svg"), "captions per attribute", &names, &counts)?;
    let r = &report.resolution;
    plots::histogram(&run.output("resolution.svg"), "image resolution (longer side, px)", &r.edges, &r.counts)?;
    let e = &report.entities_per_image;
    plots::histogram(&run.output("entities.svg"), "masked entities per image", &e.edges, &e.counts)?;
    let m = &report.mask_ratio;
    plots::histogram(&run.output("mask_ratio.svg"), "mask area / image area", &m.edges, &m.counts)?;

    println!(
        "{} captions, {} images, {} entities",
        report.captions, report.images, report.entities
    );
    run.finish("ok")?;
    Ok(Status::Complete)
}
