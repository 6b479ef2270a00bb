//! Subcommand implementations. Each returns a short human-readable summary.

use std::fmt::Write as _;
use std::path::Path;

use csi_mtl::analytics::{
    coverage_interval, histogram, magnitude_map, pas, pdp, pearson_matrix, peak_positions, centered,
    CorrelationMatrix, FeatureVector,
};
use csi_mtl::channel_gen::ChannelSample;
use csi_mtl::dataset_io::{read_dataset, DatasetHeader, DatasetWriter, FLAG_ANGLE_DELAY};
use csi_mtl::deployment::{
    encode_all, reconstruct, train_bundle, DeployMode, History, ModeBundle, Routing, SplitIndices, TaskData,
};
use csi_mtl::evaluation::{complexity_table, evaluate_bundle, nmse_db, pca_embed, ComplexityRow, TaskEval};
use csi_mtl::models::{build_decoder, build_encoder, ArchSpec};
use csi_mtl::pipeline::{interleaved_to_planes, mean_nmse_db, planes_to_interleaved, prepare_cell_with, range_sweep, Prepared};
use csi_mtl::preprocess::NormParams;
use csi_mtl::CsiError;
use csi_nn::{count_flops, count_params, Model};
use serde::Serialize;

use crate::config::{sha256_hex, ExperimentConfig, NmseDomain};
use crate::error::{CliError, Result};
use crate::manifest::{write_file, DirLock, Link, Manifest};

pub const SPATIAL_FREQUENCY_FILE: &str = "dataset_sf.csid";
pub const ANGLE_DELAY_FILE: &str = "dataset_ad.csid";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

fn integrity(msg: impl Into<String>) -> CliError {
    CliError::Integrity(msg.into())
}

fn nn(e: csi_nn::NnError) -> CliError {
    CliError::Core(CsiError::Nn(e))
}

fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

// ---------------------------------------------------------------- generate

pub fn generate(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.out.as_path();
    let _lock = DirLock::acquire(out)?;
    let regions = cfg.cell.regions()?;
    let counts: Vec<u32> = regions.iter().map(|r| r.sample_count as u32).collect();
    let mut raw_writer = if cfg.save_spatial_frequency {
        let header = DatasetHeader {
            flags: 0,
            rows: cfg.array.n_tx as u32,
            cols: cfg.array.n_subcarriers as u32,
            counts: counts.clone(),
        };
        Some(DatasetWriter::create(out.join(SPATIAL_FREQUENCY_FILE), header)?)
    } else {
        None
    };
    let mut done = 0usize;
    let total: usize = regions.iter().map(|r| r.sample_count).sum();
    let prepared = prepare_cell_with(&regions, &cfg.array, cfg.n_c, cfg.correlation_distance, cfg.seed, cfg.train.split, |s: &ChannelSample| {
        done += 1;
        if done % 1000 == 0 {
            log::info!("generated {done}/{total} samples");
        }
        match raw_writer.as_mut() {
            Some(w) => {
                let values: Vec<f32> = s.matrix.data.iter().flat_map(|z| [z.re as f32, z.im as f32]).collect();
                w.write(&values, s.task_id as u16, s.seed)
            }
            None => Ok(()),
        }
    })?;
    if let Some(w) = raw_writer {
        w.finish()?;
    }
    let header = DatasetHeader {
        flags: FLAG_ANGLE_DELAY,
        rows: prepared.n_tx as u32,
        cols: prepared.n_c as u32,
        counts,
    };
    let mut w = DatasetWriter::create(out.join(ANGLE_DELAY_FILE), header)?;
    for t in &prepared.tasks {
        for i in 0..t.all.len() {
            w.write(&planes_to_interleaved(t.all.row(i), prepared.n_tx, prepared.n_c), t.task_id as u16, t.seeds[i])?;
        }
    }
    w.finish()?;

    let mut m = Manifest::new("generate", cfg.seed, cfg.content_hash(), cfg.data_hash());
    m.add_file(out, ANGLE_DELAY_FILE)?;
    if cfg.save_spatial_frequency {
        m.add_file(out, SPATIAL_FREQUENCY_FILE)?;
    }
    m.fact("norm.offset", prepared.norm.offset);
    m.fact("norm.scale", prepared.norm.scale);
    m.fact("norm.fitted_on", &prepared.norm.fitted_on);
    m.fact("clipped_entries", prepared.clipped);
    m.fact("tasks", prepared.tasks.len());
    for t in &prepared.tasks {
        m.fact(&format!("split.task{}", t.task_id), split_hash(&t.split));
    }
    m.write(out)?;
    Ok(format!(
        "generated {total} samples in {} tasks; normalization offset {:.6}, scale {:.6}; {} test entries clipped",
        prepared.tasks.len(),
        prepared.norm.offset,
        prepared.norm.scale,
        prepared.clipped
    ))
}

fn split_hash(s: &SplitIndices) -> String {
    let text = format!("{:?}|{:?}|{:?}", s.train, s.val, s.test);
    sha256_hex(text.as_bytes())
}

/// Reads the angle-delay dataset back after checking it against its manifest
/// and the current configuration.
pub fn load_prepared(cfg: &ExperimentConfig) -> Result<(Prepared, Link)> {
    let out = cfg.out.as_path();
    let (m, link) = Manifest::read_verified(out, "generate")?;
    if m.data_sha256 != cfg.data_hash() {
        return Err(integrity(format!(
            "{ANGLE_DELAY_FILE} was generated from different data settings; rerun `generate`"
        )));
    }
    let ds = read_dataset(out.join(ANGLE_DELAY_FILE))?;
    let h = &ds.header;
    if !h.is_angle_delay() || h.rows as usize != cfg.array.n_tx || h.cols as usize != cfg.n_c {
        return Err(integrity(format!("{ANGLE_DELAY_FILE} does not hold {}x{} angle-delay samples", cfg.array.n_tx, cfg.n_c)));
    }
    let parse = |key: &str| -> Result<f64> {
        m.get_fact(key)?
            .parse()
            .map_err(|_| integrity(format!("generate manifest: `{key}` is not a number")))
    };
    let norm = NormParams {
        offset: parse("norm.offset")?,
        scale: parse("norm.scale")?,
        fitted_on: m.get_fact("norm.fitted_on")?.to_string(),
    };
    let mut groups: Vec<(Vec<f32>, Vec<u64>)> = vec![(Vec::new(), Vec::new()); h.n_tasks()];
    for r in &ds.records {
        let g = &mut groups[r.label as usize - 1];
        g.0.extend(interleaved_to_planes(&r.values, cfg.array.n_tx, cfg.n_c));
        g.1.push(r.seed);
    }
    let prepared = Prepared::from_normalized(cfg.array.n_tx, cfg.n_c, norm, groups, cfg.train.split, cfg.seed)?;
    for t in &prepared.tasks {
        if m.get_fact(&format!("split.task{}", t.task_id))? != split_hash(&t.split) {
            return Err(integrity(format!("task {} splits differ from the generated ones", t.task_id)));
        }
    }
    Ok((prepared, link))
}

// ---------------------------------------------------------------- train

fn weight_path(mode: DeployMode, part: &str) -> String {
    format!("weights/{mode}/{part}.csiw")
}

fn history_rows(csv: &mut String, model: &str, h: &History) {
    for (e, (tr, va)) in h.train_loss.iter().zip(&h.val_loss).enumerate() {
        csv.push_str(&csv_line(&[model.into(), e.to_string(), format!("{tr:e}"), format!("{va:e}")]));
    }
}

pub fn train(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.out.as_path();
    let _lock = DirLock::acquire(out)?;
    let (prepared, gen_link) = load_prepared(cfg)?;
    let n_tasks = prepared.tasks.len();
    let label = cfg.arch.label();
    let mut m = Manifest::new("train", cfg.seed, cfg.content_hash(), cfg.data_hash());
    m.parent = Some(gen_link);
    m.arch = Some(cfg.arch);
    let mut summary = String::new();
    for &mode in &cfg.modes {
        log::info!("training {mode} ({n_tasks} tasks, {})", label);
        let mut bundle = ModeBundle::new(mode, cfg.arch, n_tasks, cfg.train.seed)?;
        let report = train_bundle(&mut bundle, &prepared.train_sets(), &prepared.val_sets(), &cfg.train)?;
        let mut saved = Vec::new();
        for (k, e) in bundle.encoders.iter().enumerate() {
            saved.push((weight_path(mode, &format!("encoder_{}", k + 1)), e));
        }
        for (k, d) in bundle.decoders.iter().enumerate() {
            saved.push((weight_path(mode, &format!("decoder_{}", k + 1)), d));
        }
        if let Some(g) = &bundle.gatenet {
            saved.push((weight_path(mode, "gatenet"), g));
        }
        for (rel, model) in saved {
            write_file(&out.join(&rel), &csi_nn::encode_weights(&label, model))?;
            m.add_file(out, &rel)?;
        }
        let mut csv = csv_line(&["model".into(), "epoch".into(), "train_loss".into(), "val_loss".into()]);
        for (g, h) in report.autoencoder.iter().enumerate() {
            history_rows(&mut csv, &format!("autoencoder_{}", g + 1), h);
            m.fact(&format!("{mode}.best_epoch.autoencoder_{}", g + 1), h.best_epoch);
        }
        if let Some(h) = &report.gatenet {
            history_rows(&mut csv, "gatenet", h);
            m.fact(&format!("{mode}.best_epoch.gatenet"), h.best_epoch);
        }
        let rel = format!("losses_{mode}.csv");
        write_file(&out.join(&rel), csv.as_bytes())?;
        m.add_file(out, &rel)?;
        let best: Vec<String> = report.autoencoder.iter().map(|h| format!("{:.3e}", h.best_val)).collect();
        let _ = writeln!(summary, "{mode}: best validation loss {}", best.join(", "));
    }
    m.write(out)?;
    Ok(summary.trim_end().to_string())
}

fn load_model(out: &Path, rel: &str, label: &str) -> Result<Model<f32>> {
    let (stored, model) = csi_nn::load_weights(out.join(rel)).map_err(nn)?;
    if stored != label {
        return Err(CliError::Config(format!("{rel} holds `{stored}` but the configuration asks for `{label}`")));
    }
    Ok(model)
}

/// Loads a trained bundle after checking the train manifest against the
/// generate manifest and the configured architecture.
fn load_bundle(cfg: &ExperimentConfig, tm: &Manifest, mode: DeployMode, n_tasks: usize, need_gate: bool) -> Result<ModeBundle> {
    let out = cfg.out.as_path();
    let label = cfg.arch.label();
    let has = |rel: &str| tm.files.contains_key(rel);
    if !has(&weight_path(mode, "encoder_1")) {
        return Err(CliError::Config(format!("mode {mode} was not trained; add it to `modes` and rerun `train`")));
    }
    let n_enc = if mode == DeployMode::MtoM { n_tasks } else { 1 };
    let n_dec = if mode == DeployMode::StoS { 1 } else { n_tasks };
    let mut encoders = Vec::with_capacity(n_enc);
    for k in 1..=n_enc {
        encoders.push(load_model(out, &weight_path(mode, &format!("encoder_{k}")), &label)?);
    }
    let mut decoders = Vec::with_capacity(n_dec);
    for k in 1..=n_dec {
        decoders.push(load_model(out, &weight_path(mode, &format!("decoder_{k}")), &label)?);
    }
    let gate_rel = weight_path(mode, "gatenet");
    let gatenet = if mode == DeployMode::StoM && n_tasks > 1 && has(&gate_rel) {
        Some(load_model(out, &gate_rel, &label)?)
    } else {
        None
    };
    if need_gate && mode == DeployMode::StoM && n_tasks > 1 && gatenet.is_none() {
        return Err(CliError::Config("s2m evaluation needs a trained GateNet or --oracle-labels".into()));
    }
    // The stored specs must be the ones this architecture builds.
    let enc_spec = build_encoder(&cfg.arch)?;
    let dec_spec = build_decoder(&cfg.arch)?;
    if encoders.iter().any(|e| e.spec() != &enc_spec) || decoders.iter().any(|d| d.spec() != &dec_spec) {
        return Err(CliError::Config("stored layer lists differ from the configured architecture".into()));
    }
    let bundle = ModeBundle {
        mode,
        arch: cfg.arch,
        n_tasks,
        encoders,
        decoders,
        gatenet,
    };
    bundle.check_invariants()?;
    Ok(bundle)
}

fn read_train_manifest(cfg: &ExperimentConfig, gen_link: &Link) -> Result<(Manifest, Link)> {
    let (tm, link) = Manifest::read_verified(&cfg.out, "train")?;
    tm.check_parent(gen_link)?;
    match tm.arch {
        Some(a) if a == cfg.arch => Ok((tm, link)),
        Some(a) => Err(CliError::Config(format!(
            "weights were trained for `{}` but the configuration asks for `{}`",
            a.label(),
            cfg.arch.label()
        ))),
        None => Err(integrity("train manifest does not record an architecture")),
    }
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Serialize)]
pub struct ModeReport {
    pub mode: DeployMode,
    pub mean_nmse_db: f64,
    pub tasks: Vec<TaskEval>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub arch: ArchSpec,
    pub seed: u64,
    pub n_tasks: usize,
    pub nmse_domain: NmseDomain,
    pub oracle_labels: bool,
    pub modes: Vec<ModeReport>,
    pub complexity: Vec<ComplexityRow>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} seed {} ({} tasks, {} domain{})",
            self.arch.label(),
            self.seed,
            self.n_tasks,
            match self.nmse_domain {
                NmseDomain::Raw => "raw",
                NmseDomain::Normalized => "normalized",
            },
            if self.oracle_labels { ", oracle labels" } else { "" }
        );
        let _ = writeln!(s, "{:<5} {:>5} {:>10} {:>10} {:>9} {:>9} {:>7}", "mode", "task", "nmse_db", "oracle_db", "gap_db", "accuracy", "samples");
        for m in &self.modes {
            for t in &m.tasks {
                let acc = t.accuracy.map_or("-".to_string(), |a| format!("{a:.2}"));
                let _ = writeln!(
                    s,
                    "{:<5} {:>5} {:>10.3} {:>10.3} {:>9.4} {:>9} {:>7}",
                    m.mode.to_string(),
                    t.task_id,
                    t.nmse_db,
                    t.oracle_nmse_db,
                    t.gap_db,
                    acc,
                    t.samples
                );
            }
            let _ = writeln!(s, "{:<5} {:>5} {:>10.3}", m.mode.to_string(), "mean", m.mean_nmse_db);
        }
        s.push('\n');
        s.push_str(&complexity_text(&self.complexity));
        s
    }
}

fn complexity_text(rows: &[ComplexityRow]) -> String {
    let mut s = format!("{:<5} {:>12} {:>12} {:>16} {:>14}\n", "mode", "enc_params", "dec_params", "training_flops", "online_flops");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<5} {:>12} {:>12} {:>16} {:>14}",
            r.mode, r.encoder_params, r.decoder_params, r.training_flops, r.online_flops
        );
    }
    s
}

pub fn center(cfg: &ExperimentConfig, norm: &NormParams) -> f64 {
    match cfg.nmse_domain {
        NmseDomain::Raw => norm.zero_level(),
        NmseDomain::Normalized => 0.0,
    }
}

/// Evaluates with the task label choosing the decoder.
fn oracle_evals(bundle: &ModeBundle, tests: &[&TaskData], center: f64, batch: usize) -> Result<Vec<TaskEval>> {
    let mut out = Vec::with_capacity(tests.len());
    for data in tests {
        let r = reconstruct(bundle, data, Routing::Oracle, batch)?;
        let db = nmse_db(data, &r.data, center)?.db;
        out.push(TaskEval {
            task_id: data.task_id,
            nmse_db: db,
            oracle_nmse_db: db,
            gap_db: 0.0,
            accuracy: None,
            samples: data.len(),
        });
    }
    Ok(out)
}

pub fn eval(cfg: &ExperimentConfig, oracle_labels: bool) -> Result<EvalReport> {
    let out = cfg.out.as_path();
    let _lock = DirLock::acquire(out)?;
    let (prepared, gen_link) = load_prepared(cfg)?;
    let (tm, train_link) = read_train_manifest(cfg, &gen_link)?;
    let n_tasks = prepared.tasks.len();
    let c = center(cfg, &prepared.norm);
    let tests = prepared.test_sets();
    let mut modes = Vec::with_capacity(cfg.modes.len());
    for &mode in &cfg.modes {
        let bundle = load_bundle(cfg, &tm, mode, n_tasks, !oracle_labels)?;
        let tasks = if oracle_labels {
            oracle_evals(&bundle, &tests, c, cfg.train.batch_size)?
        } else {
            evaluate_bundle(&bundle, &tests, c, cfg.train.batch_size)?
        };
        modes.push(ModeReport {
            mode,
            mean_nmse_db: mean_nmse_db(&tasks),
            tasks,
        });
    }
    let report = EvalReport {
        arch: cfg.arch,
        seed: cfg.seed,
        n_tasks,
        nmse_domain: cfg.nmse_domain,
        oracle_labels,
        modes,
        complexity: complexity_table(&cfg.arch, &cfg.arch, &prepared.sample_counts())?,
    };
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_file(&out.join(REPORT_JSON), json.as_bytes())?;
    write_file(&out.join(REPORT_TEXT), report.table().as_bytes())?;
    let mut m = Manifest::new("eval", cfg.seed, cfg.content_hash(), cfg.data_hash());
    m.parent = Some(train_link);
    m.arch = Some(cfg.arch);
    m.fact("oracle_labels", oracle_labels);
    m.add_file(out, REPORT_JSON)?;
    m.add_file(out, REPORT_TEXT)?;
    m.write(out)?;
    Ok(report)
}

// ---------------------------------------------------------------- analyze

pub fn analyze(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.out.as_path();
    let _lock = DirLock::acquire(out)?;
    let (prepared, gen_link) = load_prepared(cfg)?;
    let zero = prepared.norm.zero_level();
    let a = &cfg.analysis;
    let mut hist_csv = csv_line(&["profile".into(), "task_id".into(), "bin_lo".into(), "bin_width".into(), "density".into()]);
    let mut interval_csv = csv_line(&["profile".into(), "task_id".into(), "level".into(), "lo".into(), "hi".into()]);
    let mut summary = String::new();
    for t in &prepared.tasks {
        let samples: Vec<_> = (0..t.all.len())
            .map(|i| centered(&t.sample(i, prepared.n_tx, prepared.n_c), zero))
            .collect();
        for (name, features) in [
            ("pas", samples.iter().map(pas).collect::<Vec<FeatureVector>>()),
            ("pdp", samples.iter().map(pdp).collect::<Vec<FeatureVector>>()),
        ] {
            let h = histogram(&peak_positions(&features), a.bins)?;
            for (b, d) in h.density.iter().enumerate() {
                hist_csv.push_str(&csv_line(&[
                    name.into(),
                    t.task_id.to_string(),
                    format!("{}", h.lo + b as f64 * h.width),
                    format!("{}", h.width),
                    format!("{d}"),
                ]));
            }
            let (lo, hi) = coverage_interval(&features, a.coverage)?;
            interval_csv.push_str(&csv_line(&[name.into(), t.task_id.to_string(), a.coverage.to_string(), lo.to_string(), hi.to_string()]));
            let _ = writeln!(summary, "task {} {name}: {}% of energy in bins {lo}..={hi}", t.task_id, a.coverage * 100.0);
        }
    }
    let mut files = vec!["analysis/profile_hist.csv".to_string(), "analysis/intervals.csv".to_string()];
    write_file(&out.join(&files[0]), hist_csv.as_bytes())?;
    write_file(&out.join(&files[1]), interval_csv.as_bytes())?;

    let mut blocks_csv = csv_line(&["input".into(), "within".into(), "cross".into(), "flagged".into()]);
    for (name, r, groups) in correlation_matrices(&prepared, a.correlation_samples)? {
        let (within, cross) = r.block_means(&groups);
        blocks_csv.push_str(&csv_line(&[name.into(), format!("{within}"), format!("{cross}"), r.flagged.len().to_string()]));
        let _ = writeln!(summary, "{name} correlation: within {within:.3}, across {cross:.3}");
        let mut csv = csv_line(&groups.iter().map(|g| format!("task_{g}")).collect::<Vec<_>>());
        for i in 0..r.n {
            csv.push_str(&csv_line(&(0..r.n).map(|j| format!("{}", r.get(i, j))).collect::<Vec<_>>()));
        }
        let rel = format!("analysis/corr_{name}.csv");
        write_file(&out.join(&rel), csv.as_bytes())?;
        files.push(rel);
    }
    files.push("analysis/blocks.csv".into());
    write_file(&out.join("analysis/blocks.csv"), blocks_csv.as_bytes())?;

    let mut m = Manifest::new("analyze", cfg.seed, cfg.content_hash(), cfg.data_hash());
    m.parent = Some(gen_link);
    for f in &files {
        m.add_file(out, f)?;
    }
    m.write(out)?;
    Ok(summary.trim_end().to_string())
}

/// Pearson matrices over the first `per_task` samples of every task, for the
/// angle-delay magnitude maps and both power profiles. Also returns the task
/// of each row.
pub fn correlation_matrices(prepared: &Prepared, per_task: usize) -> Result<Vec<(&'static str, CorrelationMatrix, Vec<usize>)>> {
    let zero = prepared.norm.zero_level();
    let mut groups = Vec::new();
    let (mut maps, mut pas_v, mut pdp_v) = (Vec::new(), Vec::new(), Vec::new());
    for t in &prepared.tasks {
        for i in 0..per_task.min(t.all.len()) {
            let h = t.sample(i, prepared.n_tx, prepared.n_c);
            let c = centered(&h, zero);
            maps.push(magnitude_map(&h, zero));
            pas_v.push(pas(&c).values);
            pdp_v.push(pdp(&c).values);
            groups.push(t.task_id);
        }
    }
    Ok(vec![
        ("csi", pearson_matrix(&maps)?, groups.clone()),
        ("pas", pearson_matrix(&pas_v)?, groups.clone()),
        ("pdp", pearson_matrix(&pdp_v)?, groups),
    ])
}

// ---------------------------------------------------------------- complexity

pub fn complexity(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.out.as_path();
    let _lock = DirLock::acquire(out)?;
    let mut csv = csv_line(&["family".into(), "cr".into(), "params".into(), "flops".into()]);
    let mut text = format!("{:<16} {:>6} {:>12} {:>14}\n", "family", "cr", "params", "flops");
    for family in &cfg.complexity.families {
        for cr in &cfg.complexity.ratios {
            let mut a = cfg.arch;
            a.family = *family;
            a.cr = *cr;
            let (e, d) = (build_encoder(&a)?, build_decoder(&a)?);
            let params = count_params(&e) + count_params(&d);
            let flops = count_flops(&e).map_err(nn)? + count_flops(&d).map_err(nn)?;
            csv.push_str(&csv_line(&[family.to_string(), cr.to_string(), params.to_string(), flops.to_string()]));
            let _ = writeln!(text, "{:<16} {:>6} {:>12} {:>14}", family.to_string(), cr.to_string(), params, flops);
        }
    }
    let counts: Vec<usize> = cfg.cell.regions()?.iter().map(|r| r.sample_count).collect();
    let rows = complexity_table(&cfg.arch, &cfg.arch, &counts)?;
    let mut modes_csv = csv_line(&["mode".into(), "encoder_params".into(), "decoder_params".into(), "training_flops".into(), "online_flops".into()]);
    for r in &rows {
        modes_csv.push_str(&csv_line(&[
            r.mode.clone(),
            r.encoder_params.to_string(),
            r.decoder_params.to_string(),
            r.training_flops.to_string(),
            r.online_flops.to_string(),
        ]));
    }
    write_file(&out.join("complexity.csv"), csv.as_bytes())?;
    write_file(&out.join("complexity_modes.csv"), modes_csv.as_bytes())?;
    let _ = write!(text, "\n{} with {} tasks\n{}", cfg.arch.label(), counts.len(), complexity_text(&rows));
    Ok(text.trim_end().to_string())
}

// ---------------------------------------------------------------- embed

pub fn embed(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.out.as_path();
    let _lock = DirLock::acquire(out)?;
    let (prepared, gen_link) = load_prepared(cfg)?;
    let (tm, train_link) = read_train_manifest(cfg, &gen_link)?;
    let mode = cfg.embed.mode;
    let bundle = load_bundle(cfg, &tm, mode, prepared.tasks.len(), false)?;
    let mut codes = Vec::new();
    let mut labels = Vec::new();
    for (k, t) in prepared.tasks.iter().enumerate() {
        let n = match cfg.embed.max_per_task {
            0 => t.test.len(),
            cap => cap.min(t.test.len()),
        };
        let subset = t.test.subset(&(0..n).collect::<Vec<_>>());
        let encoder = if mode == DeployMode::MtoM { &bundle.encoders[k] } else { &bundle.encoders[0] };
        let c = encode_all(encoder, &subset, cfg.train.batch_size)?;
        for i in 0..c.len() {
            codes.push(c.row(i).iter().map(|&v| v as f64).collect::<Vec<f64>>());
            labels.push(t.task_id);
        }
    }
    let e = pca_embed(&codes, 2)?;
    if e.degenerate > 0 {
        log::warn!("codes span fewer than 2 dimensions; {} axis left at zero", e.degenerate);
    }
    let mut csv = csv_line(&["x".into(), "y".into(), "task_id".into()]);
    for (p, l) in e.points.iter().zip(&labels) {
        csv.push_str(&csv_line(&[format!("{}", p[0]), format!("{}", p[1]), l.to_string()]));
    }
    let rel = format!("embed_{mode}.csv");
    write_file(&out.join(&rel), csv.as_bytes())?;
    let mut m = Manifest::new("embed", cfg.seed, cfg.content_hash(), cfg.data_hash());
    m.parent = Some(train_link);
    m.arch = Some(cfg.arch);
    m.fact("explained", format!("{:?}", e.explained));
    m.add_file(out, &rel)?;
    m.write(out)?;
    Ok(format!(
        "{} {mode} codes embedded; explained variance {:.4e}, {:.4e}",
        codes.len(),
        e.explained[0],
        e.explained[1]
    ))
}

// ---------------------------------------------------------------- sweep

pub fn sweep(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.out.as_path();
    let _lock = DirLock::acquire(out)?;
    let radii: Vec<f64> = cfg.sweep.diameters.iter().map(|d| d / 2.0).collect();
    let points = range_sweep(&cfg.sweep.template, &radii, &cfg.arch, &cfg.array, &cfg.train, cfg.seed)?;
    let mut csv = csv_line(&["diameter".into(), "radius".into(), "nmse_db".into()]);
    let mut text = String::new();
    for p in &points {
        csv.push_str(&csv_line(&[format!("{}", 2.0 * p.radius), format!("{}", p.radius), format!("{}", p.nmse_db)]));
        let _ = writeln!(text, "diameter {:>7.1} m: {:.3} dB", 2.0 * p.radius, p.nmse_db);
    }
    write_file(&out.join("sweep.csv"), csv.as_bytes())?;
    let mut m = Manifest::new("sweep", cfg.seed, cfg.content_hash(), cfg.data_hash());
    m.arch = Some(cfg.arch);
    m.add_file(out, "sweep.csv")?;
    m.write(out)?;
    Ok(text.trim_end().to_string())
}
