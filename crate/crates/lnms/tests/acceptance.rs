//! Acceptance suite: one PASS / FAIL line per criterion on stdout.
//!
//! Runs every criterion by default. `LNMS_CRITERIA=1,4` selects a subset.
//! Criteria 5 to 7 train twelve desk-scale networks and take well over an
//! hour on one core.

use std::collections::BTreeSet;
use std::env;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{self, Command};
use std::time::{Duration, Instant};

use lnms::commands::{cmd_eval, cmd_gen, cmd_train, greedy_eval, EvalTarget};
use lnms::config::{RunConfig, Variant};
use lnms::dataset::read_dataset;
use lnms_core::detections::{Annotation, Detection, Frame};
use lnms_core::eval::match_detections;
use lnms_core::grid::{build_grid, FeatureConfig, FeatureStack};
use lnms_core::labeling::{assign_labels, class_weights, weighted_logistic_loss, Label, LabelMap, WeightMap};
use lnms_core::net::{msra_init, NetConfig, Network, ScoreMap};
use lnms_core::nms::{greedy_nms, suppressed_score_map};
use lnms_core::rng::seeded;
use lnms_core::synth::{generate_frame, generate_split, Split, SynthConfig};
use lnms_core::BBox;
use rand::Rng;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn pass_if(ok: bool, detail: String) -> Outcome {
    Outcome { pass: Some(ok), detail }
}

fn say(line: &str) {
    // straight to the stream so progress shows even when output is captured
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn minutes(d: Duration) -> String {
    format!("{:.1} min", d.as_secs_f64() / 60.0)
}

// ---------------------------------------------------------------- criterion 1

fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    let inter = ix.max(0.0) * iy.max(0.0);
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Repeatedly take the best remaining detection and drop everything it overlaps.
fn oracle_nms(dets: &[Detection], tau: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..dets.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &i in &alive {
            if dets[i].score > dets[best].score || (dets[i].score == dets[best].score && i < best) {
                best = i;
            }
        }
        kept.push(best);
        alive.retain(|&i| i != best && oracle_iou(&dets[i].bbox, &dets[best].bbox) < tau);
    }
    kept
}

fn random_instance(rng: &mut impl Rng) -> Vec<Detection> {
    let n = rng.random_range(1..=10);
    (0..n)
        .map(|_| {
            let bbox = BBox::new(
                rng.random_range(0.0..40.0),
                rng.random_range(0.0..40.0),
                rng.random_range(4.0..30.0),
                rng.random_range(4.0..30.0),
            )
            .unwrap();
            // coarse scores so ties occur
            Detection::new(bbox, f64::from(rng.random_range(0..12u8)) * 0.5)
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = seeded(1);
    let taus: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    let (mut mismatches, mut violations, mut violating_instances) = (0, 0, 0);
    let mut example = None;
    for _ in 0..1000 {
        let dets = random_instance(&mut rng);
        let kept: Vec<BTreeSet<usize>> = taus
            .iter()
            .map(|&tau| {
                let got = greedy_nms(&dets, tau).unwrap().kept;
                if got != oracle_nms(&dets, tau) {
                    mismatches += 1;
                }
                got.into_iter().collect()
            })
            .collect();
        let mut bad = 0;
        for i in 0..taus.len() {
            for j in i + 1..taus.len() {
                if !kept[i].is_subset(&kept[j]) {
                    bad += 1;
                    if example.is_none() {
                        example = Some((taus[i], taus[j], kept[i].clone(), kept[j].clone()));
                    }
                }
            }
        }
        violations += bad;
        violating_instances += usize::from(bad > 0);
    }
    let elapsed = started.elapsed();
    let mut detail = format!(
        "oracle mismatches {mismatches}/21000; kept-set monotonicity violated on {violating_instances}/1000 instances ({violations} threshold pairs); {:.2} s",
        elapsed.as_secs_f64()
    );
    if let Some((a, b, ka, kb)) = example {
        detail += &format!("; e.g. kept(tau={a:.2}) = {ka:?} is not within kept(tau={b:.2}) = {kb:?}");
    }
    pass_if(mismatches == 0 && violations == 0 && elapsed < Duration::from_secs(10), detail)
}

// ---------------------------------------------------------------- criterion 2

fn cell_of(d: &Detection, cell: f64, cols: usize, rows: usize) -> (usize, usize) {
    let (cx, cy) = (d.bbox.x + d.bbox.w / 2.0, d.bbox.y + d.bbox.h / 2.0);
    (((cx / cell).floor().max(0.0) as usize).min(cols - 1), ((cy / cell).floor().max(0.0) as usize).min(rows - 1))
}

/// Pascal VOC recall with every detection kept.
fn full_recall(frames: &[Frame]) -> f64 {
    let (mut tp, mut total) = (0, 0);
    for f in frames {
        tp += match_detections(&f.detections, &f.annotations, 0.5).iter().filter(|&&m| m).count();
        total += f.annotations.len();
    }
    tp as f64 / total as f64
}

fn criterion_2() -> Outcome {
    let cfg = SynthConfig::default();
    let cell = 4u32;
    let (cols, rows) = ((cfg.canvas_width / cell) as usize, (cfg.canvas_height / cell) as usize);
    let taus = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0];
    let stream = Split::Test.seed(cfg.seed);
    let (mut frames_checked, mut skipped, mut mismatches) = (0, 0, 0);
    let mut index = 0;
    while frames_checked < 200 {
        let frame = generate_frame(&cfg, stream, index, "test").unwrap();
        index += 1;
        let cells: BTreeSet<_> = frame.detections.iter().map(|d| cell_of(d, f64::from(cell), cols, rows)).collect();
        if cells.len() != frame.detections.len() {
            skipped += 1;
            continue;
        }
        frames_checked += 1;
        let grid = build_grid(&frame, cell).unwrap();
        for &tau in &taus {
            let raw: BTreeSet<usize> = greedy_nms(&frame.detections, tau).unwrap().kept.into_iter().collect();
            let map = suppressed_score_map(&grid, tau).unwrap();
            let via_grid: BTreeSet<usize> = (0..grid.cell_count())
                .filter(|&c| map[c] > 0.0)
                .map(|c| grid.cell(c).unwrap().source_index)
                .collect();
            let scores_agree = via_grid.iter().all(|&i| {
                let (cx, cy) = cell_of(&frame.detections[i], f64::from(cell), cols, rows);
                map[cy * cols + cx] == frame.detections[i].score
            });
            if raw != via_grid || !scores_agree {
                mismatches += 1;
            }
        }
    }

    let dense = SynthConfig {
        lattice_stride: 2.0,
        ..SynthConfig::default()
    };
    let raw = generate_split(&dense, Split::Test, 1000).unwrap();
    let gridded: Vec<Frame> = raw
        .iter()
        .map(|f| Frame {
            detections: build_grid(f, cell).unwrap().detections(),
            ..f.clone()
        })
        .collect();
    let (r_raw, r_grid) = (full_recall(&raw), full_recall(&gridded));
    let rel = (r_raw - r_grid).abs() / r_raw;
    let raw_count: usize = raw.iter().map(|f| f.detections.len()).sum();
    let grid_count: usize = gridded.iter().map(|f| f.detections.len()).sum();
    pass_if(
        mismatches == 0 && rel <= 0.005,
        format!(
            "distinct-cell frames: {mismatches} mismatches over 200 frames x {} thresholds ({skipped} frames with shared cells skipped); \
             2 px lattice test split: recall raw {r_raw:.4} vs gridded {r_grid:.4} (relative gap {:.3}%, {raw_count} -> {grid_count} detections)",
            taus.len(),
            100.0 * rel
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn tiny_frame() -> Frame {
    let mut f = Frame::new("tiny", 12, 12);
    let boxes = [(0.5, 0.5, 6.0, 6.0, 3.0), (4.5, 1.0, 6.0, 6.5, 1.5), (1.0, 5.0, 5.0, 6.0, 2.5), (6.0, 6.0, 5.5, 5.5, 0.7)];
    for (x, y, w, h, s) in boxes {
        f.detections.push(Detection::new(BBox::new(x, y, w, h).unwrap(), s));
    }
    f.annotations.push(Annotation {
        bbox: BBox::new(0.5, 0.5, 6.0, 6.0).unwrap(),
        object_id: 0,
    });
    f.annotations.push(Annotation {
        bbox: BBox::new(6.0, 6.0, 5.5, 5.5).unwrap(),
        object_id: 1,
    });
    f
}

fn two_cell(labels: [Label; 2]) -> LabelMap {
    LabelMap {
        width: 2,
        height: 1,
        labels: labels.to_vec(),
        matches: Vec::new(),
    }
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    // value checks
    let labels = two_cell([Label::Positive, Label::Negative]);
    let weights = WeightMap { weights: vec![0.3, 0.7] };
    let zero = ScoreMap::<f64>::zeros(2, 1);
    let (l0, _) = weighted_logistic_loss(&zero, &labels, &weights);
    let equal = WeightMap { weights: vec![0.5, 0.5] };
    let f = ScoreMap {
        width: 2,
        height: 1,
        values: vec![1.0f64, -2.0],
    };
    let (l2, _) = weighted_logistic_loss(&f, &labels, &equal);
    let expected = 0.5 * ((1.0 + (-1.0f64).exp()).ln() + (1.0 + (-2.0f64).exp()).ln());
    let zero_exact = l0 == std::f64::consts::LN_2;
    let two_cell_err = (l2 - expected).abs();

    // full-network finite differences in f64
    let frame = tiny_frame();
    let features = FeatureConfig {
        cell_size: 4,
        neighborhood: 3,
        use_iou: true,
        thresholds: vec![1.0, 0.3],
    };
    let config = NetConfig {
        first_filter_size: 3,
        first_filters: 2,
        mid_filters: 3,
        mid_layers: 1,
        ..NetConfig::default()
    }
    .for_features(&features);
    let grid = build_grid(&frame, 4).unwrap();
    let fs = FeatureStack::<f64>::build(&grid, &features).unwrap();
    let labels = assign_labels(&grid, &frame.annotations, 0.5);
    let weights = class_weights(&labels);
    let mut net = Network::<f64>::new(config).unwrap();
    msra_init(&mut net, &mut seeded(5));
    // non-zero biases exercise every path
    let mut rng = seeded(6);
    for layer in 0..net.param_blocks().len() / 2 {
        for b in net.param_blocks_mut()[2 * layer + 1].iter_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    let loss_of = |net: &Network<f64>| {
        let (out, _) = net.forward(&fs).unwrap();
        weighted_logistic_loss(&out, &labels, &weights).0
    };
    let (out, cache) = net.forward(&fs).unwrap();
    let (_, d_out) = weighted_logistic_loss(&out, &labels, &weights);
    let grads = net.backward(&cache, &d_out).unwrap();
    let analytic: Vec<Vec<f64>> = grads.views().iter().map(|g| g.to_vec()).collect();
    drop(cache);

    let h = 1e-6;
    let (mut worst, mut checked) = (0.0f64, 0);
    for (b, block) in analytic.iter().enumerate() {
        for (i, &a) in block.iter().enumerate() {
            let orig = net.param_blocks()[b][i];
            net.param_blocks_mut()[b][i] = orig + h;
            let up = loss_of(&net);
            net.param_blocks_mut()[b][i] = orig - h;
            let down = loss_of(&net);
            net.param_blocks_mut()[b][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-8 { 0.0 } else { (a - numeric).abs() / scale };
            worst = worst.max(err);
            checked += 1;
        }
    }
    let elapsed = started.elapsed();
    pass_if(
        zero_exact && two_cell_err <= 1e-12 && worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "f=0 loss {l0:?} (ln 2 exact: {zero_exact}); two-cell error {two_cell_err:.1e}; \
             {checked} parameters, worst relative gradient error {worst:.2e}; {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

struct Sweep {
    taus: Vec<f64>,
    ars: Vec<f64>,
}

impl Sweep {
    fn best(&self) -> (f64, f64) {
        self.taus
            .iter()
            .zip(&self.ars)
            .fold((0.0, f64::NEG_INFINITY), |acc, (&t, &a)| if a > acc.1 { (t, a) } else { acc })
    }
}

fn sweep(cfg: &RunConfig, frames: &[Frame], taus: Vec<f64>) -> Sweep {
    let ars = taus.iter().map(|&t| greedy_eval(cfg, frames, t).unwrap().summary.ar).collect();
    Sweep { taus, ars }
}

fn criterion_4(test: &[Frame]) -> Outcome {
    let started = Instant::now();
    let cfg = RunConfig::default();
    let s = sweep(&cfg, test, cfg.eval.sweep_taus.clone());
    let (best_tau, best) = s.best();
    let at = |tau: f64| s.ars[s.taus.iter().position(|&t| t == tau).unwrap()];
    let (a0, a1) = (at(0.0), at(1.0));
    let elapsed = started.elapsed();
    let table: Vec<String> = s.taus.iter().zip(&s.ars).map(|(t, a)| format!("{t:.1}:{:.1}", 100.0 * a)).collect();
    pass_if(
        best_tau > 0.0 && best_tau < 1.0 && best - a0 >= 0.05 && best - a1 >= 0.05 && elapsed < Duration::from_secs(300),
        format!(
            "AR(tau) = [{}]; best tau {best_tau:.1} beats tau=0 by {:.1} and tau=1 by {:.1} points; {:.1} s",
            table.join(" "),
            100.0 * (best - a0),
            100.0 * (best - a1),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criteria 5 to 7

struct DeskRuns {
    /// AR per variant (in `Variant::ALL` order) per seed.
    ar: Vec<Vec<f64>>,
    best_greedy: (f64, f64),
    elapsed: Duration,
    /// Wall time of the full-variant trainings and evaluations only.
    full_variant_elapsed: Duration,
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn desk_runs(data: &Path, test: &[Frame]) -> DeskRuns {
    let started = Instant::now();
    let cfg = RunConfig::default();
    let fine: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    let best_greedy = sweep(&cfg, test, fine).best();
    let work = tempfile::tempdir().unwrap();
    let mut ar = vec![Vec::new(); Variant::ALL.len()];
    let mut full_variant_elapsed = Duration::ZERO;
    for (v, variant) in Variant::ALL.into_iter().enumerate() {
        for seed in SEEDS {
            let run_started = Instant::now();
            let mut run = cfg.clone();
            run.train.seed = seed;
            let trained = cmd_train(&run, variant, Some(&data.join("train.jsonl")), work.path()).unwrap();
            let summary = cmd_eval(
                &run,
                &data.join("test.jsonl"),
                &EvalTarget::Checkpoint(trained.checkpoint),
                &work.path().join("results"),
            )
            .unwrap();
            if variant == Variant::IouFull {
                full_variant_elapsed += run_started.elapsed();
            }
            eprintln!(
                "    desk run {variant} seed {seed}: AR {:.2} (final loss {:.4}, {})",
                100.0 * summary.ar,
                trained.final_loss.unwrap_or(f64::NAN),
                minutes(run_started.elapsed())
            );
            ar[v].push(summary.ar);
        }
    }
    DeskRuns {
        ar,
        best_greedy,
        elapsed: started.elapsed(),
        full_variant_elapsed,
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

fn pct(v: &[f64]) -> String {
    v.iter().map(|a| format!("{:.1}", 100.0 * a)).collect::<Vec<_>>().join("/")
}

fn criterion_5(d: &DeskRuns) -> Outcome {
    let full = &d.ar[3];
    let (tau, best) = d.best_greedy;
    let winners = full.iter().filter(|&&a| a >= best + 0.03).count();
    pass_if(
        winners >= 2 && d.full_variant_elapsed <= Duration::from_secs(7200),
        format!(
            "IoU+S1_full AR per seed {} vs best GreedyNMS {:.1} (tau {tau:.2}); {winners}/3 seeds clear +3 points; \
             full-variant runs took {}, all twelve runs {}",
            pct(full),
            100.0 * best,
            minutes(d.full_variant_elapsed),
            minutes(d.elapsed)
        ),
    )
}

fn criterion_6(d: &DeskRuns) -> Outcome {
    let medians: Vec<f64> = d.ar.iter().map(|v| median(v)).collect();
    let ordered = medians.windows(2).all(|w| w[0] <= w[1] + 0.01);
    let rows: Vec<String> = Variant::ALL
        .iter()
        .zip(&d.ar)
        .zip(&medians)
        .map(|((v, ars), m)| format!("{v} {:.1} [{}]", 100.0 * m, pct(ars)))
        .collect();
    pass_if(ordered, format!("median AR: {}", rows.join(" <= ")))
}

fn criterion_7(d: &DeskRuns) -> Outcome {
    let gap = median(&d.ar[1]) - median(&d.ar[0]);
    pass_if(gap > 0.0, format!("median AR(IoU+S1) - median AR(S1) = {:.2} points", 100.0 * gap))
}

// ---------------------------------------------------------------- criterion 8

const SMALL_RUN: &str = r#"{
  "splits": {"train": 300, "val": 20, "test": 200},
  "train": {"iterations": 300, "log_every": 50, "checkpoint_every": 150}
}"#;

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lnms")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(root: &Path, config: &Path) -> Result<(), String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (data, results, runs) = (root.join("data"), root.join("results"), root.join("runs"));
    let (cfg, test) = (s(config), s(&data.join("test.jsonl")));
    run_cli(&["gen", "--config", &cfg, "--out", &s(&data)])?;
    run_cli(&["sweep", "--config", &cfg, "--data", &test, "--out", &s(&results)])?;
    for variant in ["S1", "IoU+S1_full"] {
        run_cli(&["train", "--config", &cfg, "--variant", variant, "--data", &s(&data.join("train.jsonl")), "--out", &s(&runs)])?;
    }
    for ckpt in ["tnet_s1_seed0.ckpt", "tnet_iou_s1_full_seed0.ckpt"] {
        run_cli(&["eval", "--config", &cfg, "--data", &test, "--checkpoint", &s(&runs.join(ckpt)), "--out", &s(&results)])?;
    }
    run_cli(&["report", "--results", &s(&results), "--out", &s(&root.join("report"))])
}

fn criterion_8() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, SMALL_RUN).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if let Err(e) = pipeline(&a, &config).and_then(|_| pipeline(&b, &config)) {
        return pass_if(false, format!("pipeline failed: {e}"));
    }
    let mut differing = Vec::new();
    let files = ["report/ar_table.csv", "report/ar_table.md", "report/pr_curves.csv", "runs/tnet_iou_s1_full_seed0.ckpt", "data/test.jsonl"];
    for f in files {
        if fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap() {
            differing.push(f);
        }
    }
    pass_if(
        differing.is_empty(),
        format!(
            "gen -> sweep -> train (S1, IoU+S1_full) -> eval -> report twice: {} of {} compared files differ {:?}; {:.1} s",
            differing.len(),
            files.len(),
            differing,
            started.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- driver

/// Criteria whose check is itself unsatisfiable. They still run unchanged and
/// still print FAIL; they do not fail the target.
const KNOWN_DEFECTS: [(u32, &str); 1] = [(
    1,
    "greedy kept sets are not monotone in tau. With scores A > B > C, iou(A,B) = 0.4, iou(B,C) = 0.6 and \
     iou(A,C) = 0, tau = 0.3 keeps {A, C} while tau = 0.5 keeps {A, B}: raising tau lets B survive and B suppresses C",
)];

fn selected() -> BTreeSet<u32> {
    match env::var("LNMS_CRITERIA") {
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=9).collect(),
    }
}

fn main() {
    let args: Vec<String> = env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    // honour libtest-style name filters so `cargo test <filter>` skips this target
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance criterion".contains(f.as_str())) {
        return;
    }

    let which = selected();
    let needs_data = which.iter().any(|c| (4..=7).contains(c));
    let data = tempfile::tempdir().unwrap();
    let test = if needs_data {
        cmd_gen(&RunConfig::default(), data.path()).unwrap();
        read_dataset(&data.path().join("test.jsonl")).unwrap()
    } else {
        Vec::new()
    };
    let desk = which.iter().any(|c| (5..=7).contains(c)).then(|| desk_runs(data.path(), &test));

    let mut failed = 0;
    let mut known = Vec::new();
    for id in which {
        let outcome = match id {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(&test),
            5 => criterion_5(desk.as_ref().unwrap()),
            6 => criterion_6(desk.as_ref().unwrap()),
            7 => criterion_7(desk.as_ref().unwrap()),
            8 => criterion_8(),
            9 => Outcome {
                pass: None,
                detail: "real-footage benchmarks need an external detector and datasets; covered by criteria 4 to 7".into(),
            },
            _ => continue,
        };
        let verdict = match outcome.pass {
            Some(true) => "PASS",
            Some(false) if KNOWN_DEFECTS.iter().any(|(c, _)| *c == id) => {
                known.push(id);
                "FAIL (known defect in the criterion, see below)"
            }
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "N/A",
        };
        say(&format!("criterion {id}: {verdict}: {}", outcome.detail));
    }
    for (id, why) in KNOWN_DEFECTS.iter().filter(|(c, _)| known.contains(c)) {
        say(&format!("note on criterion {id}: {why}"));
    }
    say(&format!("{failed} unexpected failures, {} known-defect failures", known.len()));
    if failed > 0 {
        process::exit(1);
    }
}
