use anyhow::{Context, Result};
use maskcap::dataset::{stage_mixture_with, AttributeId, TaskKind};
use maskcap::decoder::Vocabulary;
use maskcap::error::Error;
use maskcap::model::CaptionModel;
use maskcap::training::{run_stage, Checkpoint, StageConfig, TrainingData};

use crate::config::{load_training_data, RunConfig};
use crate::manifest::{write_json, Run};
use crate::{plots, Status, TrainArgs};

/// Every caption plus every instruction the templates can produce.
fn build_vocab(cfg: &RunConfig, data: &TrainingData) -> Result<Vocabulary> {
    let t = &cfg.model.templates;
    let mut texts: Vec<String> = data.sources.values().flatten().map(|s| s.caption.clone()).collect();
    for a in AttributeId::all() {
        texts.push(t.build(TaskKind::Aarc, Some(a))?);
    }
    texts.push(t.build(TaskKind::Rdc, None)?);
    texts.push(t.build(TaskKind::Cgic, None)?);
    Ok(Vocabulary::from_corpus(texts.iter().map(String::as_str)))
}

pub fn run(args: &TrainArgs) -> Result<Status> {
    if !(1..=3).contains(&args.stage) {
        return Err(Error::Config(format!("--stage must be 1, 2 or 3, got {}", args.stage)).into());
    }
    let cfg = RunConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed);

    let prior = if args.stage > 1 {
        let path = args.checkpoint.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "stage {} needs the stage {} checkpoint (--checkpoint)",
                args.stage,
                args.stage - 1
            ))
        })?;
        let ck = Checkpoint::load(path).map_err(|e| {
            Error::Config(format!("cannot read stage {} checkpoint {}: {e}", args.stage - 1, path.display()))
        })?;
        if ck.stage != args.stage - 1 {
            return Err(Error::Config(format!(
                "stage {} needs a stage {} checkpoint, {} is from stage {}",
                args.stage,
                args.stage - 1,
                path.display(),
                ck.stage
            ))
            .into());
        }
        Some((ck, path.clone()))
    } else {
        None
    };

    let (data, image_files) = load_training_data(&cfg)?;
    let mut inputs = cfg.data_files();
    inputs.extend(image_files);
    if let Some((_, p)) = &prior {
        inputs.push(if p.is_dir() { p.join(maskcap::training::CHECKPOINT_FILE) } else { p.clone() });
    }
    let mut run = Run::start(&args.out, "train", Some(&args.config), Some(seed), &inputs)?;

    let mut model = match &prior {
        Some((ck, _)) => ck.model()?,
        None => {
            let mut m = CaptionModel::new(cfg.model.clone(), build_vocab(&cfg, &data)?, seed)?;
            if let Some(w) = &cfg.init_weights {
                m.load_weights(w).with_context(|| format!("loading {}", w.display()))?;
            }
            m
        }
    };

    let region: Vec<String> = cfg.stage2_list();
    let region_refs: Vec<&str> = region.iter().map(String::as_str).collect();
    let spec = stage_mixture_with(args.stage, &cfg.registry(), &region_refs)?;
    let mut opt = cfg.optimizer(args.stage).clone();
    opt.seed = seed.wrapping_add(args.stage as u64);
    let stage_cfg = StageConfig::new(args.stage, spec, opt)?;

    let (report, trainer) = run_stage(&mut model, &stage_cfg, &data)?;
    Checkpoint::new(args.stage, &model, trainer).save(run.dir())?;
    run.output(maskcap::training::CHECKPOINT_FILE);
    write_json(&run.output("report.json"), &report)?;
    plots::loss_curve(&run.output("loss.svg"), &format!("stage {} loss", args.stage), &report.losses)?;
    println!(
        "stage {}: {} steps, final loss {}",
        args.stage,
        report.losses.len(),
        report.final_loss().map_or("n/a".into(), |l| format!("{l:.4}"))
    );
    run.finish("ok")?;
    Ok(Status::Complete)
}
