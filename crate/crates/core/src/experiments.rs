//! Comparative studies: the three training schemes, the cross-task
//! generalization matrix, correlation analysis, SNR sweeps, the scalability
//! run, the complexity table, and the file writers for all of them.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::channel::{dataset_distance, generate_dataset, ChannelParams, TaskDataset};
use crate::detectors::{hard_decision, mmse_detect, ser, ser_stderr};
use crate::error::{Error, Result};
use crate::learngene::{expand, extract_learngene, ExpansionStrategy, ExtractionPolicy, LearngeneUnit};
use crate::neuralnet::Model;
use crate::numerics::{complex_to_real_channel, eigen_spectrum, realify, RngStream};
use crate::sdnet::{
    build_sdnet, build_upsampled_sdnet, evaluate_ser_with_stderr, init_model, train_on_task,
    EpochLog, TrainConfig,
};

/// Which of the three comparison schemes a run belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeKind {
    Scratch,
    Transfer,
    Learngene(ExpansionStrategy),
}

impl SchemeKind {
    pub fn label(&self) -> String {
        match self {
            SchemeKind::Scratch => "scratch".into(),
            SchemeKind::Transfer => "transfer".into(),
            SchemeKind::Learngene(s) => format!("learngene-{}", s.canonical().label()),
        }
    }
}

/// One (snr, ser) evaluation point with its Monte Carlo error bar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SerPoint {
    pub snr_db: f64,
    pub ser: f64,
    pub stderr: f64,
    pub n_symbols: usize,
}

/// Everything one scheme run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scheme: String,
    pub task_id: u64,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    pub test_points: Vec<SerPoint>,
    pub wall_ms: u64,
    pub transferred_ratio: f64,
    /// Hash of the target training data, for cross-scheme fairness checks.
    pub dataset_hash: String,
}

/// Inputs shared by every scheme on one target task.
pub struct SchemeContext<'a> {
    pub target: &'a TaskDataset,
    pub source: Option<&'a TaskDataset>,
    pub collective: Option<&'a Model>,
    pub unit: Option<&'a LearngeneUnit>,
    pub individual_n_conv: usize,
    pub train: TrainConfig,
    /// Epoch budget for the transfer scheme's pre-training phase.
    pub pretrain_epochs: usize,
}

/// Run one scheme on the target task and evaluate on its test split.
pub fn run_scheme(
    kind: &SchemeKind,
    ctx: &SchemeContext<'_>,
    seed: u64,
) -> Result<(MetricsRecord, Model)> {
    let t0 = Instant::now();
    let target = ctx.target;
    let spec = build_sdnet(ctx.individual_n_conv, target.nt, target.nr);
    let total_params = Model::new(spec.clone())?.count_params().1;
    let train_cfg = TrainConfig { seed, ..ctx.train.clone() };

    let (mut model, anchors, transferred) = match kind {
        SchemeKind::Scratch => {
            let model = init_model(spec, seed, "scheme-scratch", target.task_id)?;
            (model, Vec::new(), 0usize)
        }
        SchemeKind::Transfer => {
            let source = ctx.source.ok_or(Error::MissingSource)?;
            let mut model = init_model(spec, seed, "scheme-transfer", source.task_id)?;
            let pre_cfg = TrainConfig { epochs: ctx.pretrain_epochs, seed, ..ctx.train.clone() };
            train_on_task(&mut model, source, &pre_cfg, &[])?;
            // The fine-tuned model keeps every pre-trained parameter, but the
            // input scale must be re-fitted to the target task.
            model.spec.meta.input_scale = None;
            (model, Vec::new(), total_params)
        }
        SchemeKind::Learngene(strategy) => {
            let unit = ctx.unit.ok_or(Error::MissingUnit)?;
            let expanded = expand(spec, ctx.collective, unit, *strategy, seed, target.task_id)?;
            let copied: usize = expanded
                .anchors
                .iter()
                .map(|a| a.w.len() + a.b.len())
                .sum();
            (expanded.model, expanded.anchors, copied)
        }
    };

    let (epochs, _) = train_on_task(&mut model, target, &train_cfg, &anchors)?;
    let (test_ser, stderr, n) = evaluate_ser_with_stderr(&mut model, target.test())?;
    let record = MetricsRecord {
        scheme: kind.label(),
        task_id: target.task_id,
        seed,
        epochs,
        test_points: vec![SerPoint { snr_db: target.snr_db, ser: test_ser, stderr, n_symbols: n }],
        wall_ms: t0.elapsed().as_millis() as u64,
        transferred_ratio: transferred as f64 / total_params as f64,
        dataset_hash: target.content_hash(),
    };
    Ok((record, model))
}

/// Cross-task SER matrix and its generalization-error matrix in dB.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneralizationResult {
    /// ser[m][n]: model trained on task m, tested on task n.
    pub ser: Vec<Vec<f64>>,
    /// 10*log10(|SER_mn - SER_n| / SER_n); None where undefined.
    pub gen_error_db: Vec<Vec<Option<f64>>>,
    pub excluded: usize,
}

/// Evaluate each matched-trained model on every task's test split.
pub fn generalization_matrix(
    models: &mut [Model],
    tasks: &[TaskDataset],
) -> Result<GeneralizationResult> {
    assert!(tasks.len() >= 2 && models.len() == tasks.len());
    let k = tasks.len();
    let mut ser = vec![vec![0.0; k]; k];
    for (m, model) in models.iter_mut().enumerate() {
        for (n, task) in tasks.iter().enumerate() {
            let (s, _, _) = evaluate_ser_with_stderr(model, task.test())?;
            ser[m][n] = s;
        }
    }
    let mut gen = vec![vec![None; k]; k];
    let mut excluded = 0;
    for m in 0..k {
        for n in 0..k {
            if m == n {
                continue;
            }
            match gen_error_db(ser[m][n], ser[n][n]) {
                Ok(v) => gen[m][n] = Some(v),
                Err(Error::DegenerateSer(_)) => excluded += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(GeneralizationResult { ser, gen_error_db: gen, excluded })
}

/// Relative SER degradation in dB; degenerate when the matched SER is zero or
/// the two rates coincide (log of zero).
pub fn gen_error_db(ser_mismatched: f64, ser_matched: f64) -> Result<f64> {
    if ser_matched == 0.0 || ser_mismatched == ser_matched {
        return Err(Error::DegenerateSer(
            (ser_matched * 1e12) as u64,
        ));
    }
    Ok(10.0 * ((ser_mismatched - ser_matched).abs() / ser_matched).log10())
}

/// Pearson correlation coefficient.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::Config(format!(
            "correlation needs at least 3 points, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pair (dataset distance, generalization error) over the defined
/// off-diagonal entries and correlate them.
pub fn distance_vs_generalization(
    tasks: &[TaskDataset],
    gen: &GeneralizationResult,
    pair_count: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rng = RngStream::derive(seed, "pcc-pairing", 0);
    for m in 0..tasks.len() {
        for n in 0..tasks.len() {
            if let Some(g) = gen.gen_error_db[m][n] {
                let k = pair_count.min(tasks[m].samples.len()).min(tasks[n].samples.len());
                xs.push(dataset_distance(&tasks[m], &tasks[n], k, &mut rng));
                ys.push(g);
            }
        }
    }
    let r = pcc(&xs, &ys)?;
    Ok((xs, ys, r))
}

/// Default evaluation grid: 20 to 30 dB in 2.5 dB steps.
pub fn default_snr_grid() -> Vec<f64> {
    vec![20.0, 22.5, 25.0, 27.5, 30.0]
}

/// One labeled SER-vs-SNR curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCurve {
    pub scheme: String,
    pub points: Vec<SerPoint>,
    /// Count of adjacent SNR pairs where SER increased with SNR.
    pub monotonicity_violations: usize,
}

/// Evaluate trained models and the ZF/MMSE baselines across the SNR grid.
/// Datasets are regenerated per SNR with identical channel draws and fresh
/// noise.
pub fn snr_sweep(
    models: &mut [(String, &mut Model)],
    target: &TaskDataset,
    params: &ChannelParams,
    snr_grid: &[f64],
) -> Result<Vec<SweepCurve>> {
    let mut series: Vec<(String, Vec<SerPoint>)> = models
        .iter()
        .map(|(label, _)| (label.clone(), Vec::new()))
        .chain([("zf".to_string(), Vec::new()), ("mmse".to_string(), Vec::new())])
        .collect();

    for &snr in snr_grid {
        let ds = generate_dataset(
            &target.config,
            target.samples.len(),
            snr,
            params,
            target.master_seed,
        )?;
        let test = ds.test();
        for (i, (_, model)) in models.iter_mut().enumerate() {
            let (s, e, n) = evaluate_ser_with_stderr(model, test)?;
            series[i].1.push(SerPoint { snr_db: snr, ser: s, stderr: e, n_symbols: n });
        }
        let mut zf_preds = Vec::new();
        let mut mmse_preds = Vec::new();
        let mut truths = Vec::new();
        for s in test {
            zf_preds.push(hard_decision(&s.x_zf));
            let hr = complex_to_real_channel(&s.h_ls);
            let soft = mmse_detect(&hr, &realify(&s.y), s.noise_var / 2.0)?;
            mmse_preds.push(hard_decision(&soft));
            truths.push(s.x.clone());
        }
        let n = test.len() * ds.nt;
        let zf = ser(&zf_preds, &truths)?;
        let mm = ser(&mmse_preds, &truths)?;
        let base = models.len();
        series[base].1.push(SerPoint { snr_db: snr, ser: zf, stderr: ser_stderr(zf, n), n_symbols: n });
        series[base + 1].1.push(SerPoint { snr_db: snr, ser: mm, stderr: ser_stderr(mm, n), n_symbols: n });
    }

    Ok(series
        .into_iter()
        .map(|(scheme, points)| {
            let violations = points
                .windows(2)
                .filter(|w| w[1].ser > w[0].ser)
                .count();
            SweepCurve { scheme, points, monotonicity_violations: violations }
        })
        .collect())
}

/// Learngene-vs-scratch on a narrower array via the upsampled builder.
pub fn scalability_run(
    unit: &LearngeneUnit,
    task: &TaskDataset,
    individual_n_conv: usize,
    train: &TrainConfig,
    strategy: ExpansionStrategy,
    seed: u64,
) -> Result<(MetricsRecord, MetricsRecord)> {
    let spec = build_upsampled_sdnet(individual_n_conv, task.nt, task.nr)?;
    let total_params = Model::new(spec.clone())?.count_params().1;
    let cfg = TrainConfig { seed, ..train.clone() };

    let run = |model: &mut Model, anchors: &[crate::neuralnet::ConvAnchor], label: &str, ratio: f64| -> Result<MetricsRecord> {
        let t0 = Instant::now();
        let (epochs, _) = train_on_task(model, task, &cfg, anchors)?;
        let (s, e, n) = evaluate_ser_with_stderr(model, task.test())?;
        Ok(MetricsRecord {
            scheme: label.into(),
            task_id: task.task_id,
            seed,
            epochs,
            test_points: vec![SerPoint { snr_db: task.snr_db, ser: s, stderr: e, n_symbols: n }],
            wall_ms: t0.elapsed().as_millis() as u64,
            transferred_ratio: ratio,
            dataset_hash: task.content_hash(),
        })
    };

    let mut expanded = expand(spec.clone(), None, unit, strategy, seed, task.task_id)?;
    let copied: usize = expanded.anchors.iter().map(|a| a.w.len() + a.b.len()).sum();
    let lg = run(
        &mut expanded.model,
        &expanded.anchors.clone(),
        "learngene-upsampled",
        copied as f64 / total_params as f64,
    )?;

    let mut scratch = init_model(spec, seed, "scalability-scratch", task.task_id)?;
    let sc = run(&mut scratch, &[], "scratch-upsampled", 0.0)?;
    Ok((lg, sc))
}

/// One row of the complexity table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub name: String,
    pub conv_layers: usize,
    pub trainable_params: usize,
    pub flops: u64,
    /// Transferred-parameter ratio against the individual model, formatted
    /// with one decimal; empty when not applicable.
    pub transferred_ratio: String,
}

/// Reproduce the architecture accounting table at the default geometry.
pub fn complexity_report(nt: usize, nr: usize) -> Result<Vec<ComplexityRow>> {
    let individual = Model::new(build_sdnet(8, nt, nr))?;
    let collective = Model::new(build_sdnet(12, nt, nr))?;
    let conv_count = |m: &Model| {
        m.spec
            .layers
            .iter()
            .filter(|l| matches!(l.kind, crate::neuralnet::LayerKind::Conv3x3 { .. }))
            .count()
    };
    let ind_params = individual.count_params().1;

    // Unit accounting: four mid conv layers of the collective stack.
    let mid_conv_params = 9 * 8 * 8 + 8;
    let unit_params = 4 * mid_conv_params;
    let per_mid_conv_flops = 2u64 * 9 * 8 * 8 * ((2 * nr + 1) * 2 * nt) as u64;
    let unit_flops = 4 * per_mid_conv_flops;
    let ratio = |p: usize| format!("{:.1}%", 100.0 * p as f64 / ind_params as f64);

    Ok(vec![
        ComplexityRow {
            name: "individual (scratch)".into(),
            conv_layers: conv_count(&individual),
            trainable_params: ind_params,
            flops: individual.count_flops().1,
            transferred_ratio: "0.0%".into(),
        },
        ComplexityRow {
            name: "individual (transfer)".into(),
            conv_layers: conv_count(&individual),
            trainable_params: ind_params,
            flops: individual.count_flops().1,
            transferred_ratio: "100.0%".into(),
        },
        ComplexityRow {
            name: "collective".into(),
            conv_layers: conv_count(&collective),
            trainable_params: collective.count_params().1,
            flops: collective.count_flops().1,
            transferred_ratio: String::new(),
        },
        ComplexityRow {
            name: "learngene unit".into(),
            conv_layers: 4,
            trainable_params: unit_params,
            flops: unit_flops,
            transferred_ratio: ratio(unit_params),
        },
        ComplexityRow {
            name: "individual (learngene)".into(),
            conv_layers: conv_count(&individual),
            trainable_params: ind_params,
            flops: individual.count_flops().1,
            transferred_ratio: ratio(unit_params),
        },
    ])
}

/// Mean ZF-noise eigen-spectrum of a task over its test-split channels.
pub fn mean_spectrum(task: &TaskDataset) -> Vec<f64> {
    let test = task.test();
    let mut acc: Vec<f64> = Vec::new();
    for s in test {
        let spec = eigen_spectrum(&s.h);
        if acc.is_empty() {
            acc = vec![0.0; spec.len()];
        }
        for (a, v) in acc.iter_mut().zip(spec) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= test.len() as f64;
    }
    acc
}

// ---------------------------------------------------------------------------
// File writers. All CSV output is deterministic given identical inputs.
// ---------------------------------------------------------------------------

/// Append per-epoch records as JSON lines.
pub fn write_metrics_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in records {
        for e in &r.epochs {
            let line = serde_json::json!({
                "scheme": r.scheme,
                "task_id": r.task_id,
                "seed": r.seed,
                "epoch": e.epoch,
                "train_loss": e.train_loss,
                "val_ser": e.val_ser,
                "wall_ms": e.wall_ms,
            });
            writeln!(f, "{line}")?;
        }
    }
    Ok(())
}

/// Final results, one row per (scheme, seed, snr) evaluation.
pub fn write_summary_csv(
    path: &Path,
    records: &[MetricsRecord],
    config_hash: &str,
    master_seed: u64,
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "scheme,task_id,seed,snr_db,ser,stderr,n_symbols,transferred_ratio,config_hash,master_seed"
    )?;
    for r in records {
        for p in &r.test_points {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}",
                r.scheme,
                r.task_id,
                r.seed,
                p.snr_db,
                p.ser,
                p.stderr,
                p.n_symbols,
                r.transferred_ratio,
                config_hash,
                master_seed
            )?;
        }
    }
    Ok(())
}

/// The significance matrix, one row per significant layer.
pub fn write_gradsig_csv(path: &Path, log: &crate::learngene::GradSigLog) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let k = log.rho.first().map_or(0, |r| r.len());
    let header: Vec<String> = (1..=k).map(|t| format!("task_{t}")).collect();
    writeln!(f, "layer,{}", header.join(","))?;
    for (l, row) in log.rho.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{},{}", l + 1, cells.join(","))?;
    }
    Ok(())
}

/// Mean channel eigen-spectra, one row per (task, eigenvalue index).
pub fn write_spectra_csv(path: &Path, tasks: &[TaskDataset]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "task_id,index,eigenvalue")?;
    for task in tasks {
        for (i, v) in mean_spectrum(task).iter().enumerate() {
            writeln!(f, "{},{},{}", task.task_id, i + 1, v)?;
        }
    }
    Ok(())
}

/// Minimal static SVG line chart; log-scale y when all values are positive.
pub fn write_svg_chart(
    path: &Path,
    title: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const M: f64 = 60.0;
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if points.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let log_y = points.iter().all(|(_, y)| *y > 0.0);
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &points {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(ty(*y));
        y1 = y1.max(ty(*y));
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (ty(y) - y0) / (y1 - y0) * (H - 2.0 * M);

    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{title}</text>\n",
        W / 2.0
    ));
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - M,
        W - M
    ));
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let path_points: Vec<String> = pts.iter().map(|(x, y)| format!("{},{}", px(*x), py(*y))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path_points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{label}</text>\n",
            W - M + 4.0,
            M + 16.0 * i as f64
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Run extraction with the policy and persist both the unit and a plain-text
/// note of what was selected.
pub fn extract_and_describe(
    model: &Model,
    log: &crate::learngene::GradSigLog,
    policy: &ExtractionPolicy,
) -> Result<(LearngeneUnit, String)> {
    let unit = extract_learngene(model, log, policy)?;
    let desc = format!(
        "unit: layers {:?}, {} parameters, fallback={}",
        unit.source_ids,
        unit.param_count(),
        unit.fallback
    );
    Ok((unit, desc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::make_task;
    use crate::learngene::{ExtractionPolicy, GradSigLog};

    fn tiny_params() -> ChannelParams {
        ChannelParams { nt: 2, nr: 4, np: 4, n_calib: 200, ..ChannelParams::default() }
    }

    #[test]
    fn pcc_examples() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pcc(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pcc(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        let flat = vec![5.0; 4];
        assert!(matches!(pcc(&x, &flat), Err(Error::ZeroVariance)));
    }

    #[test]
    fn gen_error_examples() {
        // Double the matched SER -> ratio 1 -> 0 dB.
        assert!((gen_error_db(2e-2, 1e-2).unwrap()).abs() < 1e-12);
        assert!(matches!(gen_error_db(1e-2, 1e-2), Err(Error::DegenerateSer(_))));
        assert!(matches!(gen_error_db(1e-2, 0.0), Err(Error::DegenerateSer(_))));
    }

    #[test]
    fn complexity_rows_match_published_table() {
        let rows = complexity_report(8, 32).unwrap();
        let by_name = |n: &str| rows.iter().find(|r| r.name.contains(n)).unwrap();
        let ind = by_name("scratch");
        assert_eq!(ind.trainable_params, 21_627);
        assert_eq!(ind.flops, 9_917_440);
        let col = by_name("collective");
        assert_eq!(col.trainable_params, 24_027);
        assert_eq!(col.flops, 14_709_760);
        let unit = by_name("unit");
        assert_eq!(unit.trainable_params, 2_336);
        assert_eq!(unit.flops, 4_792_320);
        assert_eq!(unit.transferred_ratio, "10.8%");
        // Unit FLOPs are exactly four mid-conv layers.
        assert_eq!(unit.flops % 4, 0);
        assert_eq!(by_name("transfer").transferred_ratio, "100.0%");
    }

    #[test]
    fn scheme_ratios_are_exact() {
        let p = tiny_params();
        let task = generate_dataset(&make_task(51, 0, &p), 40, 15.0, &p, 51).unwrap();
        let collective_spec = build_sdnet(4, p.nt, p.nr);
        let mut collective = init_model(collective_spec, 51, "collective-init", 0).unwrap();
        let log = GradSigLog {
            rho: (0..4).map(|_| vec![0.01; 3]).collect(),
            tau: 1e-4,
            epochs_per_task: 1,
            task_ids: vec![0, 1, 2],
        };
        let unit = extract_learngene(&collective, &log, &ExtractionPolicy::default()).unwrap();
        let _ = &mut collective;

        let ctx = SchemeContext {
            target: &task,
            source: Some(&task),
            collective: Some(&collective),
            unit: Some(&unit),
            individual_n_conv: 4,
            train: TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::default() },
            pretrain_epochs: 1,
        };
        let (scratch, _) = run_scheme(&SchemeKind::Scratch, &ctx, 1).unwrap();
        assert_eq!(scratch.transferred_ratio, 0.0);
        let (transfer, _) = run_scheme(&SchemeKind::Transfer, &ctx, 1).unwrap();
        assert_eq!(transfer.transferred_ratio, 1.0);
        let strategy = ExpansionStrategy {
            family: crate::learngene::Family::Embedding,
            position: crate::learngene::Position::Bottom,
        };
        let (lg, _) = run_scheme(&SchemeKind::Learngene(strategy), &ctx, 1).unwrap();
        let expected = unit.param_count() as f64
            / Model::new(build_sdnet(4, p.nt, p.nr)).unwrap().count_params().1 as f64;
        assert!((lg.transferred_ratio - expected).abs() < 1e-12);
        // Fairness: all three consumed the same target data.
        assert_eq!(scratch.dataset_hash, transfer.dataset_hash);
        assert_eq!(scratch.dataset_hash, lg.dataset_hash);
    }

    #[test]
    fn default_ratio_matches_published_value() {
        let unit_params = (4 * (9 * 8 * 8 + 8)) as f64;
        let ratio = unit_params / 21_627.0;
        assert!((ratio - 0.108).abs() < 0.0005);
    }

    #[test]
    fn missing_inputs_are_reported() {
        let p = tiny_params();
        let task = generate_dataset(&make_task(52, 0, &p), 40, 15.0, &p, 52).unwrap();
        let ctx = SchemeContext {
            target: &task,
            source: None,
            collective: None,
            unit: None,
            individual_n_conv: 4,
            train: TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::default() },
            pretrain_epochs: 1,
        };
        assert!(matches!(
            run_scheme(&SchemeKind::Transfer, &ctx, 1),
            Err(Error::MissingSource)
        ));
        let strategy = ExpansionStrategy {
            family: crate::learngene::Family::Embedding,
            position: crate::learngene::Position::Bottom,
        };
        assert!(matches!(
            run_scheme(&SchemeKind::Learngene(strategy), &ctx, 1),
            Err(Error::MissingUnit)
        ));
    }

    #[test]
    fn sweep_covers_grid_and_baselines() {
        let p = tiny_params();
        let task = generate_dataset(&make_task(53, 0, &p), 60, 20.0, &p, 53).unwrap();
        let mut model = init_model(build_sdnet(2, p.nt, p.nr), 53, "sweep-init", 0).unwrap();
        let tc = TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::default() };
        train_on_task(&mut model, &task, &tc, &[]).unwrap();
        let mut models = [("net".to_string(), &mut model)];
        let grid = default_snr_grid();
        let curves = snr_sweep(&mut models, &task, &p, &grid).unwrap();
        assert_eq!(curves.len(), 3);
        let labels: Vec<&str> = curves.iter().map(|c| c.scheme.as_str()).collect();
        assert!(labels.contains(&"zf") && labels.contains(&"mmse") && labels.contains(&"net"));
        for c in &curves {
            assert_eq!(c.points.len(), grid.len());
            for (a, b) in c.points.iter().zip(&grid) {
                assert_eq!(a.snr_db, *b);
            }
        }
    }

    #[test]
    fn sweep_reuses_channels_across_snrs() {
        let p = tiny_params();
        let a = generate_dataset(&make_task(54, 0, &p), 20, 20.0, &p, 54).unwrap();
        let b = generate_dataset(&make_task(54, 0, &p), 20, 30.0, &p, 54).unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.h, sb.h);
            assert_ne!(sa.y, sb.y);
        }
    }

    #[test]
    fn csv_writers_are_deterministic() {
        let p = tiny_params();
        let task = generate_dataset(&make_task(55, 0, &p), 40, 15.0, &p, 55).unwrap();
        let record = MetricsRecord {
            scheme: "scratch".into(),
            task_id: 0,
            seed: 1,
            epochs: vec![EpochLog { epoch: 1, train_loss: 0.5, val_ser: 0.25, wall_ms: 7 }],
            test_points: vec![SerPoint { snr_db: 15.0, ser: 0.125, stderr: 0.01, n_symbols: 80 }],
            wall_ms: 7,
            transferred_ratio: 0.0,
            dataset_hash: task.content_hash(),
        };
        let dir = tempfile::tempdir().unwrap();
        let s1 = dir.path().join("a.csv");
        let s2 = dir.path().join("b.csv");
        write_summary_csv(&s1, &[record.clone()], "hash", 55).unwrap();
        write_summary_csv(&s2, &[record.clone()], "hash", 55).unwrap();
        assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());

        let m1 = dir.path().join("m.jsonl");
        write_metrics_jsonl(&m1, &[record]).unwrap();
        let text = std::fs::read_to_string(&m1).unwrap();
        assert!(text.contains("\"scheme\":\"scratch\""));

        let log = GradSigLog {
            rho: vec![vec![0.5, 0.25], vec![0.125, 0.0625]],
            tau: 1e-4,
            epochs_per_task: 1,
            task_ids: vec![0, 1],
        };
        let g1 = dir.path().join("g.csv");
        write_gradsig_csv(&g1, &log).unwrap();
        let text = std::fs::read_to_string(&g1).unwrap();
        assert_eq!(text, "layer,task_1,task_2\n1,0.5,0.25\n2,0.125,0.0625\n");
    }

    #[test]
    fn svg_renders_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.svg");
        write_svg_chart(
            &path,
            "ser vs snr",
            &[("zf".into(), vec![(20.0, 0.1), (25.0, 0.01), (30.0, 0.001)])],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg") && text.contains("polyline") && text.contains("zf"));
    }

    #[test]
    fn spectra_writer_covers_all_tasks() {
        let p = tiny_params();
        let tasks: Vec<_> = (0..2u64)
            .map(|t| generate_dataset(&make_task(56, t, &p), 40, 15.0, &p, 56).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spectra.csv");
        write_spectra_csv(&path, &tasks).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Header + nt rows per task.
        assert_eq!(text.lines().count(), 1 + 2 * p.nt);
        // Distinct tasks produce distinct mean spectra.
        let a = mean_spectrum(&tasks[0]);
        let b = mean_spectrum(&tasks[1]);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 0.0));
    }
}
