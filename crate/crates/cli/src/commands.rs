//! One function per subcommand. Each writes its artifacts under `out`,
//! re-reads what it wrote, and fails if the check does not hold.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cxa_core::ablation::{ablation_grid, run_ablation};
use cxa_core::batch::Batch;
use cxa_core::checkpoint::{load_checkpoint, save_checkpoint, TrainingMeta};
use cxa_core::gradcheck_suite::{run_gradcheck_suite, SuiteOptions, GRADCHECK_TOLERANCE};
use cxa_core::metrics::evaluate;
use cxa_core::model::renormalize_quaternions;
use cxa_core::report::{ablation_tsv, horizons_tsv, metrics_json, metrics_tsv};
use cxa_core::train::train;
use cxa_core::{CoreError, Modality, ModalitySet, Model};
use cxa_datagen::dataset::{format_real, read_dataset, write_dataset, DatasetManifest};
use cxa_datagen::generate::{generate_split, Split};
use cxa_datagen::geometry::{denormalize, EgoPose};
use cxa_datagen::sample::{Channels, TrajectorySample};

use crate::config::RunConfig;

pub const TRAIN_FILE: &str = "train.dat";
pub const TEST_FILE: &str = "test.dat";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

fn prepare(out: &Path, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("config.toml"), &config.to_toml()?)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// A dataset file, or the split's file inside a `generate` output directory.
fn dataset_path(path: &Path, split: Split) -> PathBuf {
    if path.is_dir() {
        path.join(match split {
            Split::Train => TRAIN_FILE,
            Split::Test => TEST_FILE,
        })
    } else {
        path.to_path_buf()
    }
}

fn load_split(path: &Path, split: Split) -> Result<(DatasetManifest, Vec<TrajectorySample>)> {
    let file = dataset_path(path, split);
    read_dataset(&file).with_context(|| format!("reading dataset {}", file.display()))
}

fn ensure_served(modalities: ModalitySet, manifest: &DatasetManifest) -> Result<()> {
    if !modalities.is_served_by(&manifest.channels()) {
        let mut found: Vec<String> = vec!["Y".into()];
        found.extend(manifest.neighbor_modes.iter().map(|&m| Modality::Neighbors(m).to_string()));
        found.extend(manifest.scene_modes.iter().map(|&m| Modality::Scene(m).to_string()));
        return Err(CoreError::ModalityMismatch {
            expected: modalities.label(),
            found: found.join("+"),
        }
        .into());
    }
    Ok(())
}

pub fn generate(config: &RunConfig, out: &Path) -> Result<()> {
    prepare(out, config)?;
    let channels = Channels::default();
    for (split, count, file) in [
        (Split::Train, config.data.train_count, TRAIN_FILE),
        (Split::Test, config.data.test_count, TEST_FILE),
    ] {
        let (manifest, samples) = generate_split(&config.world, &channels, config.seed, split, count)?;
        let path = out.join(file);
        write_dataset(&path, &manifest, &samples)?;
        let manifest_json = serde_json::to_string_pretty(&manifest)?;
        write(&out.join(format!("{}.manifest.json", split.name())), &manifest_json)?;
        let (back_manifest, back) = read_dataset(&path)?;
        ensure!(back_manifest == manifest && back == samples, "{} did not read back identically", path.display());
        println!("{}: {} samples -> {}", split.name(), samples.len(), path.display());
    }
    Ok(())
}

pub fn train_model(config: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let (manifest, samples) = load_split(data, Split::Train)?;
    ensure_served(config.model.modalities, &manifest)?;
    prepare(out, config)?;
    let mut model = Model::new(config.model.clone(), config.seed)?;
    let outcome = train(&mut model, &samples, &config.train, None)?;

    let mut log = String::from("epoch\tloss\n");
    for (e, loss) in outcome.history.epoch_losses.iter().enumerate() {
        writeln!(log, "{}\t{}", e + 1, format_real(*loss))?;
    }
    write(&out.join("losses.tsv"), &log)?;
    let path = out.join(CHECKPOINT_FILE);
    let meta = TrainingMeta {
        epoch: config.train.epochs,
        seed: config.seed,
    };
    save_checkpoint(&path, &model, &meta)?;

    let (loaded, loaded_meta) = load_checkpoint(&path)?;
    let probe: Vec<&TrajectorySample> = samples.iter().take(8).collect();
    let batch = Batch::assemble(&probe, model.config.modalities)?;
    ensure!(
        loaded_meta == meta && loaded.predict(&batch)? == model.predict(&batch)?,
        "checkpoint {} does not reproduce the trained model",
        path.display()
    );
    println!(
        "trained {} on {} samples for {} epochs, final loss {:.6e} -> {}",
        model.config.kind.name(),
        samples.len(),
        config.train.epochs,
        outcome.history.epoch_losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

pub fn eval(config: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let (model, _) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (manifest, samples) = load_split(data, Split::Test)?;
    ensure_served(model.config.modalities, &manifest)?;
    let report = evaluate(&model, &samples, config.eval.horizon_mode)?;
    ensure!(
        report.identity_residual() <= 1e-12 * report.mse_overall.max(1.0),
        "overall error disagrees with its components"
    );
    ensure!(report.horizons.len() == 5, "expected 5 horizon rows");
    prepare(out, config)?;
    let tsv = metrics_tsv(&report);
    write(&out.join("metrics.tsv"), &tsv)?;
    write(&out.join("horizons.tsv"), &horizons_tsv(&report))?;
    write(&out.join("metrics.json"), &metrics_json(&report))?;
    print!("{tsv}");
    Ok(())
}

pub fn ablate(config: &RunConfig, data: &Path, rows: Option<Vec<ModalitySet>>, out: &Path) -> Result<()> {
    ensure!(data.is_dir(), "ablation needs a `generate` output directory with both splits");
    let (train_manifest, train_set) = load_split(data, Split::Train)?;
    let (_, test_set) = load_split(data, Split::Test)?;
    let grid = rows.unwrap_or_else(ablation_grid);
    ensure!(!grid.is_empty(), "empty ablation grid");
    prepare(out, config)?;
    let table = run_ablation(
        &grid,
        &config.model,
        &config.train,
        &train_set,
        &test_set,
        config.eval.horizon_mode,
    );
    let tsv = ablation_tsv(&table);
    write(&out.join("ablation.tsv"), &tsv)?;
    write(&out.join("ablation.json"), &serde_json::to_string_pretty(&table)?)?;
    print!("{tsv}");
    let failed: Vec<&str> = table.iter().filter_map(|r| r.error.as_deref()).collect();
    if !failed.is_empty() {
        let served = grid.iter().all(|m| m.is_served_by(&train_manifest.channels()));
        bail!(
            "{} of {} rows failed{}:\n  {}",
            failed.len(),
            table.len(),
            if served { "" } else { " (the dataset lacks some channels)" },
            failed.join("\n  ")
        );
    }
    Ok(())
}

pub fn gradcheck(config: &RunConfig, options: SuiteOptions, out: &Path) -> Result<()> {
    prepare(out, config)?;
    let report = run_gradcheck_suite(options);
    let mut tsv = String::from("check\tcoordinates\tmax_rel_error\tresult\n");
    for c in &report.checks {
        let verdict = match (&c.error, c.passed) {
            (Some(e), _) => format!("error: {e}"),
            (None, true) => "pass".into(),
            (None, false) => "FAIL".into(),
        };
        writeln!(tsv, "{}\t{}\t{:.3e}\t{verdict}", c.name, c.coordinates, c.max_rel_error)?;
    }
    write(&out.join("gradcheck.tsv"), &tsv)?;
    print!("{tsv}");
    if let Some(w) = report.worst() {
        println!("worst relative error {:.3e} ({}), tolerance {GRADCHECK_TOLERANCE:e}", w.max_rel_error, w.name);
    }
    let failures = report.checks.iter().filter(|c| !c.passed).count();
    ensure!(failures == 0, "{failures} of {} gradient checks failed", report.checks.len());
    Ok(())
}

const POSE_HEADER: &str = "t\tx\ty\tz\tqw\tqx\tqy\tqz\n";

fn pose_table(poses: &[EgoPose], fps: f64) -> String {
    let mut out = String::from(POSE_HEADER);
    for (i, p) in poses.iter().enumerate() {
        out.push_str(&format_real(i as f64 / fps));
        for v in p.to_row() {
            out.push('\t');
            out.push_str(&format_real(v));
        }
        out.push('\n');
    }
    out
}

fn rows_to_poses(rows: &[f64]) -> Vec<EgoPose> {
    rows.chunks_exact(7).map(EgoPose::from_row).collect()
}

pub fn predict(config: &RunConfig, checkpoint: &Path, data: &Path, index: usize, out: &Path) -> Result<()> {
    let (model, _) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (manifest, samples) = load_split(data, Split::Test)?;
    ensure_served(model.config.modalities, &manifest)?;
    let Some(sample) = samples.get(index) else {
        bail!("sample index {index} out of range (dataset has {} samples)", samples.len());
    };
    let batch = Batch::assemble(&[sample], model.config.modalities)?;
    let mut predicted = model.predict(&batch)?.data().to_vec();
    renormalize_quaternions(&mut predicted);

    let observed = rows_to_poses(&sample.ego_past);
    let truth: Vec<EgoPose> = observed.iter().copied().chain(rows_to_poses(&sample.ego_future)).collect();
    let forecast: Vec<EgoPose> = observed.iter().copied().chain(rows_to_poses(&predicted)).collect();
    prepare(out, config)?;
    let fps = config.world.fps;
    for (name, poses) in [("observed", &observed), ("ground_truth", &truth), ("predicted", &forecast)] {
        write(&out.join(format!("{name}_relative.tsv")), &pose_table(poses, fps))?;
        let world = denormalize(poses, &sample.origin)?;
        write(&out.join(format!("{name}_world.tsv")), &pose_table(&world, fps))?;
    }
    println!(
        "sample {} (episode seed {}): {} observed + {} predicted rows -> {}",
        sample.id,
        sample.source_seed,
        observed.len(),
        forecast.len() - observed.len(),
        out.display()
    );
    Ok(())
}
