//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. Numeric arguments select a subset, e.g.
//! `cargo test -p avvp-validation --test acceptance -- 1 5`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use avvp_core::datagen::{generate, GenConfig};
use avvp_core::grid::{BinaryGrid, ProbGrid};
use avvp_core::losses::{avvp_loss, cma_loss, pseudo_loss, ValidPairSet};
use avvp_core::metrics::{
    event_f1, grid_events, merge_events, score_video, segment_f1, span_iou, spans_to_column, EventSpan, Modality,
    SegmentLabels,
};
use avvp_core::model::{forward, ModelConfig, ModelParams, PROB_EPS};
use avvp_core::teacher::{adaptive_threshold_mask, topk_mask, TeacherState};
use avvp_core::tensor::{Tape, Tensor};
use avvp_core::trainer::{epoch_order, evaluate, train, EvalOptions, TrainConfig, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 8] = [
    ("gradient correctness", gradient_correctness),
    ("EMA closed form", ema_closed_form),
    ("mask properties", mask_properties),
    ("loss oracles", loss_oracles),
    ("metric oracles", metric_oracles),
    ("end-to-end synthetic learning", end_to_end),
    ("determinism", determinism),
    ("ablation identity", ablation_identity),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        ran += 1;
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {n} {:<30} {}  {} [{:.2} s]",
            name,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

// ---------------------------------------------------------------- 1

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let check = avvp_cli::gradcheck_toy(1, 1e-5).expect("toy gradient check runs");
    let secs = start.elapsed().as_secs_f64();
    let err = check.report.max_relative_error;
    let pass = err < 1e-5 && check.mask_ones > 0 && check.omega > 0 && secs < 30.0;
    outcome(
        pass,
        format!(
            "max relative error {err:.2e} over {} params (|M| {}, |Ω| {}; need < 1e-5, < 30 s)",
            check.report.coordinates, check.mask_ones, check.omega
        ),
    )
}

// ---------------------------------------------------------------- 2

fn ema_closed_form() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::default();
    let frozen = ModelParams::init(&cfg).unwrap();
    let theta0 = ModelParams::init(&ModelConfig { seed: 99, ..cfg }).unwrap();
    let alpha: f64 = 0.9;
    let mut teacher = TeacherState::new(&theta0, alpha).unwrap();
    for _ in 0..10 {
        teacher.ema_update(&frozen).unwrap();
    }
    let decay = alpha.powi(10);
    let worst = teacher
        .params()
        .values()
        .iter()
        .zip(frozen.values())
        .zip(theta0.values())
        .map(|((&t, &s), &t0)| ((t - s) - decay * (t0 - s)).abs())
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && secs < 1.0,
        format!("max |θ′₁₀ − θ* − 0.9¹⁰(θ′₀ − θ*)| = {worst:.2e} over {} coords (need ≤ 1e-12, < 1 s)", frozen.len()),
    )
}

// ---------------------------------------------------------------- 3

fn random_grid(rng: &mut ChaCha8Rng) -> (ProbGrid, Vec<bool>) {
    let t = rng.random_range(1..=12);
    let c = rng.random_range(1..=5);
    // twenty levels, so ties are frequent
    let values = (0..t * c).map(|_| f64::from(rng.random_range(0..=20u8)) / 20.0).collect();
    let label = (0..c).map(|_| rng.random_bool(0.6)).collect();
    (ProbGrid::new(t, c, values).unwrap(), label)
}

/// Top-k by stable sort on descending score: equal scores keep index order.
fn sorted_topk(column: &[f64], k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..column.len()).collect();
    idx.sort_by(|&a, &b| column[b].partial_cmp(&column[a]).unwrap());
    let mut out = vec![false; column.len()];
    idx.iter().take(k).for_each(|&i| out[i] = true);
    out
}

fn mask_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = [0usize; 3];
    for _ in 0..1000 {
        let (scores, label) = random_grid(&mut rng);
        let t = scores.segments();

        let m = adaptive_threshold_mask(&scores, 1.0, Some(&label)).unwrap();
        for (c, &y) in label.iter().enumerate() {
            let col = scores.column(c);
            let max = col.iter().cloned().fold(f64::MIN, f64::max);
            let argmax = col.iter().position(|&v| v == max).unwrap();
            if y && !m.grid.get(argmax, c) {
                violations[0] += 1;
            }
        }

        let k = rng.random_range(1..=14);
        let m = topk_mask(&scores, k, Some(&label)).unwrap();
        for (c, &y) in label.iter().enumerate() {
            let want = if y { sorted_topk(&scores.column(c), k) } else { vec![false; t] };
            let ones = if y { k.min(t) } else { 0 };
            if m.grid.column(c) != want || m.grid.column_count(c) != ones {
                violations[1] += 1;
            }
        }

        let g1 = rng.random_range(0.1..2.0);
        let g2 = g1 + rng.random_range(0.0..1.5);
        let lo = adaptive_threshold_mask(&scores, g1, Some(&label)).unwrap();
        let hi = adaptive_threshold_mask(&scores, g2, Some(&label)).unwrap();
        let bigger = topk_mask(&scores, k + rng.random_range(0..4), Some(&label)).unwrap();
        let gamma_ok = hi.grid.cells().iter().zip(lo.grid.cells()).all(|(&h, &l)| !h || l);
        let k_ok = m.grid.cells().iter().zip(bigger.grid.cells()).all(|(&s, &b)| !s || b);
        if !gamma_ok || !k_ok {
            violations[2] += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        violations == [0, 0, 0] && secs < 5.0,
        format!(
            "1000 grids: argmax misses {}, top-k mismatches {}, monotonicity breaks {} (need 0, < 5 s)",
            violations[0], violations[1], violations[2]
        ),
    )
}

// ---------------------------------------------------------------- 4

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn cma_value(a: &Tensor, v: &Tensor, omega: &ValidPairSet) -> f64 {
    let mut tape = Tape::new();
    let (ea, ev) = (tape.constant(a.clone()), tape.constant(v.clone()));
    let l = cma_loss(&mut tape, ea, ev, omega).unwrap();
    tape.value(l).item().unwrap()
}

fn orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn rotate(m: &Tensor, q: &[Vec<f64>]) -> Tensor {
    let (t, d) = (m.rows(), m.cols());
    let mut out = vec![0.0; t * d];
    for r in 0..t {
        for j in 0..d {
            out[r * d + j] = (0..d).map(|l| m.at(r, l) * q[l][j]).sum();
        }
    }
    Tensor::matrix(t, d, out).unwrap()
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = [0.0f64; 3];
    let mut nonzero_grads = 0;
    let mut out_of_range = 0;
    let mut worst_rotation = 0.0f64;
    for _ in 0..100 {
        // video BCE
        let c = rng.random_range(1..=8);
        let p: Vec<f64> = (0..c)
            .map(|_| match rng.random_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random_range(0.0..1.0),
            })
            .collect();
        let y: Vec<bool> = (0..c).map(|_| rng.random_bool(0.5)).collect();
        let mut tape = Tape::new();
        let pv = tape.leaf(Tensor::vector(p.clone()));
        let l = avvp_loss(&mut tape, pv, &y).unwrap();
        let mut want = 0.0;
        for i in 0..c {
            let q = clamp(p[i]);
            want += if y[i] { -q.ln() } else { -(1.0 - q).ln() };
        }
        worst[0] = worst[0].max((tape.value(l).item().unwrap() - want / c as f64).abs());

        // pseudo loss
        let (t, k) = (5, 3);
        let probs: Vec<f64> = (0..t * k).map(|_| rng.random_range(0.0..=1.0)).collect();
        let cells: Vec<bool> = (0..t * k).map(|_| rng.random_bool(0.4)).collect();
        let mask = BinaryGrid::new(t, k, cells.clone()).unwrap();
        let mut tape = Tape::new();
        let fused = tape.leaf(Tensor::matrix(t, k, probs.clone()).unwrap());
        let l = pseudo_loss(&mut tape, fused, &mask).unwrap();
        let (mut sum, mut count) = (0.0, 0usize);
        for row in 0..t {
            for col in 0..k {
                if cells[row * k + col] {
                    sum += -clamp(probs[row * k + col]).ln();
                    count += 1;
                }
            }
        }
        let want = if count == 0 { 0.0 } else { sum / count as f64 };
        let got = tape.value(l).item().unwrap();
        worst[1] = worst[1].max((got - want).abs());
        let grad = tape.backward(l).unwrap().wrt(&tape, fused);
        nonzero_grads += cells.iter().zip(&grad).filter(|(&m, &g)| !m && g != 0.0).count();
        // moving an unmasked entry must leave the loss bit-for-bit unchanged
        if let Some(i) = cells.iter().position(|&m| !m) {
            let mut moved = probs.clone();
            moved[i] = 1.0 - moved[i];
            let mut tape = Tape::new();
            let fused = tape.leaf(Tensor::matrix(t, k, moved).unwrap());
            let l = pseudo_loss(&mut tape, fused, &mask).unwrap();
            if tape.value(l).item().unwrap() != got {
                nonzero_grads += 1;
            }
        }

        // cross-modal agreement
        let t = rng.random_range(1..=8);
        let d = rng.random_range(1..=8);
        let a = random_matrix(&mut rng, t, d);
        let v = random_matrix(&mut rng, t, d);
        let pairs: Vec<(usize, usize)> = (0..t)
            .flat_map(|s| (0..4).map(move |c| (s, c)))
            .filter(|_| rng.random_bool(0.4))
            .collect();
        let omega = ValidPairSet {
            pairs,
            tau_a: 0.5,
            tau_v: 0.5,
        };
        let mut want = 0.0;
        for &(s, _) in &omega.pairs {
            let (ra, rv) = (a.row(s), v.row(s));
            let (mut dot, mut na, mut nv) = (0.0, 0.0, 0.0);
            for j in 0..d {
                dot += ra[j] * rv[j];
                na += ra[j] * ra[j];
                nv += rv[j] * rv[j];
            }
            want += 1.0 - dot / (na.sqrt() * nv.sqrt() + 1e-12);
        }
        if !omega.is_empty() {
            want /= omega.len() as f64;
        }
        let got = cma_value(&a, &v, &omega);
        worst[2] = worst[2].max((got - want).abs());
        if !(0.0..=2.0).contains(&got) {
            out_of_range += 1;
        }
        let q = orthogonal(&mut rng, d);
        worst_rotation = worst_rotation.max((cma_value(&rotate(&a, &q), &rotate(&v, &q), &omega) - got).abs());
    }
    let pass = worst.iter().all(|&w| w <= 1e-12) && nonzero_grads == 0 && out_of_range == 0 && worst_rotation <= 1e-9;
    outcome(
        pass,
        format!(
            "max |Δ| avvp {:.1e}, pseudo {:.1e}, cma {:.1e} (≤ 1e-12); off-mask gradient hits {nonzero_grads}; \
             cma outside [0,2] {out_of_range}; rotation drift {worst_rotation:.1e} (≤ 1e-9)",
            worst[0], worst[1], worst[2]
        ),
    )
}

// ---------------------------------------------------------------- 5

/// Maximal runs of set bits, each as a bitmask.
fn runs(bits: u32, t_len: usize) -> Vec<u32> {
    let mut out = Vec::new();
    let mut cur = 0u32;
    for t in 0..t_len {
        if bits >> t & 1 == 1 {
            cur |= 1 << t;
        } else if cur != 0 {
            out.push(cur);
            cur = 0;
        }
    }
    if cur != 0 {
        out.push(cur);
    }
    out
}

/// Size of the largest one-to-one matching with IoU > 1/2, by trying every
/// assignment.
fn best_matching(pred: &[u32], gt: &[u32], used: &mut [bool]) -> usize {
    let Some((&p, rest)) = pred.split_first() else {
        return 0;
    };
    let mut best = best_matching(rest, gt, used);
    for g in 0..gt.len() {
        if !used[g] && 2 * (p & gt[g]).count_ones() > (p | gt[g]).count_ones() {
            used[g] = true;
            best = best.max(1 + best_matching(rest, gt, used));
            used[g] = false;
        }
    }
    best
}

fn f1(tp: usize, fp: usize, fneg: usize) -> f64 {
    if tp + fp + fneg == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}

/// Segment and event (tp, fp, fn) summed over class columns given as bitmasks.
fn brute_counts(pred: &[u32], gt: &[u32], t_len: usize) -> ([usize; 3], [usize; 3]) {
    let (mut seg, mut evt) = ([0; 3], [0; 3]);
    for (&p, &g) in pred.iter().zip(gt) {
        seg[0] += (p & g).count_ones() as usize;
        seg[1] += (p & !g).count_ones() as usize;
        seg[2] += (!p & g).count_ones() as usize;
        let (rp, rg) = (runs(p, t_len), runs(g, t_len));
        let tp = best_matching(&rp, &rg, &mut vec![false; rg.len()]);
        evt[0] += tp;
        evt[1] += rp.len() - tp;
        evt[2] += rg.len() - tp;
    }
    (seg, evt)
}

fn grid_bits(grid: &BinaryGrid) -> Vec<u32> {
    (0..grid.classes())
        .map(|c| (0..grid.segments()).filter(|&t| grid.get(t, c)).map(|t| 1u32 << t).sum())
        .collect()
}

fn metric_oracles() -> Outcome {
    let mut pairs = 0u64;
    let mut mismatches = 0u64;

    // every (prediction, ground truth) grid pair with T ≤ 6, C ≤ 2
    for t_len in 1..=6 {
        for classes in 1..=2 {
            let patterns = 1u32 << (t_len * classes);
            let col = |bits: u32, c: usize| bits >> (c * t_len) & ((1 << t_len) - 1);
            let mut labels = Vec::with_capacity(patterns as usize);
            let mut spans = Vec::with_capacity(patterns as usize);
            let mut bits = Vec::with_capacity(patterns as usize);
            for p in 0..patterns {
                let cols: Vec<u32> = (0..classes).map(|c| col(p, c)).collect();
                let mut g = BinaryGrid::zeros(t_len, classes);
                for (c, &b) in cols.iter().enumerate() {
                    for t in 0..t_len {
                        g.set(t, c, b >> t & 1 == 1);
                    }
                }
                spans.push(grid_events(&g, Modality::Audio));
                labels.push(SegmentLabels::new(g, BinaryGrid::zeros(t_len, classes)).unwrap());
                bits.push(cols);
            }
            for p in 0..patterns as usize {
                for g in 0..patterns as usize {
                    let (seg, evt) = brute_counts(&bits[p], &bits[g], t_len);
                    let s = segment_f1(&labels[p], &labels[g], Modality::Audio).unwrap();
                    let e = event_f1(&spans[p], &spans[g], 0.5);
                    if s != f1(seg[0], seg[1], seg[2]) || e != f1(evt[0], evt[1], evt[2]) {
                        mismatches += 1;
                    }
                    pairs += 1;
                }
            }
        }
    }

    // random full videos, T = 10, C = 5, every event type and aggregate
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut random_mismatches = 0;
    for _ in 0..1000 {
        let mut draw = |density: f64| {
            let mut grid = || BinaryGrid::new(10, 5, (0..50).map(|_| rng.random_bool(density)).collect()).unwrap();
            let (a, v) = (grid(), grid());
            SegmentLabels::new(a, v).unwrap()
        };
        let (pred, gt) = (draw(0.35), draw(0.35));
        let scores = score_video(&pred, &gt, 0.5).unwrap();
        let mut seg_counts = Vec::new();
        let mut evt_counts = Vec::new();
        for m in Modality::ALL {
            let (s, e) = brute_counts(&grid_bits(&pred.grid(m)), &grid_bits(&gt.grid(m)), 10);
            let (direct_s, direct_e) = (
                segment_f1(&pred, &gt, m).unwrap(),
                event_f1(&grid_events(&pred.grid(m), m), &grid_events(&gt.grid(m), m), 0.5),
            );
            if direct_s != f1(s[0], s[1], s[2]) || direct_e != f1(e[0], e[1], e[2]) {
                random_mismatches += 1;
            }
            seg_counts.push(s);
            evt_counts.push(e);
        }
        let level = |c: &[[usize; 3]]| {
            let fs: Vec<f64> = c.iter().map(|x| f1(x[0], x[1], x[2])).collect();
            [
                fs[0],
                fs[1],
                fs[2],
                (fs[0] + fs[1] + fs[2]) / 3.0,
                f1(c[0][0] + c[1][0], c[0][1] + c[1][1], c[0][2] + c[1][2]),
            ]
        };
        let close = |a: [f64; 5], b: [f64; 5]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
        if !close(scores.segment.as_array(), level(&seg_counts)) || !close(scores.event.as_array(), level(&evt_counts)) {
            random_mismatches += 1;
        }
    }

    let mut merge_failures = 0;
    for t_len in 1..=8 {
        for bits in 0u32..1 << t_len {
            let column: Vec<bool> = (0..t_len).map(|t| bits >> t & 1 == 1).collect();
            let spans = merge_events(&column, 0, Modality::Audio);
            if spans_to_column(&spans, t_len) != column || spans.len() != runs(bits, t_len).len() {
                merge_failures += 1;
            }
        }
    }

    let span = |onset, offset| EventSpan {
        class: 0,
        onset,
        offset,
        modality: Modality::Audio,
    };
    let iou = span_iou(&span(0, 2), &span(1, 3));
    let pass = mismatches == 0 && random_mismatches == 0 && merge_failures == 0 && iou == 1.0 / 3.0;
    outcome(
        pass,
        format!(
            "{pairs} exhaustive grid pairs: {mismatches} mismatches; 1000 random videos: {random_mismatches}; \
             merge round-trip failures {merge_failures}; iou([0,2),[1,3)) = {iou}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let train_set = generate(&GenConfig::default()).unwrap();
    let test_set = generate(&GenConfig {
        n_videos: 50,
        first_id: 200,
        ..GenConfig::default()
    })
    .unwrap();
    let mut base = TrainConfig::default();
    base.fit_to(&train_set);
    let opts = EvalOptions::default();
    let type_av = |p: &ModelParams| evaluate(p, &test_set, &opts).unwrap().segment.type_av;

    let untrained = type_av(&TrainState::new(&base).unwrap().student);
    let run = |cfg: &TrainConfig| {
        let state = train(&train_set, cfg, |_| {}).unwrap();
        let finite = state.history.iter().all(|r| r.is_finite());
        (type_av(&state.student), finite)
    };
    let (full, full_finite) = run(&base);
    let (no_ema, no_ema_finite) = run(&TrainConfig {
        enable_ema: false,
        ..base.clone()
    });
    let (no_cma, no_cma_finite) = run(&TrainConfig {
        enable_cma: false,
        ..base.clone()
    });
    let secs = start.elapsed().as_secs_f64();
    let pts = |x: f64| 100.0 * (x - untrained);
    let pass = pts(full) >= 30.0
        && full_finite
        && no_ema_finite
        && no_cma_finite
        && pts(no_ema) > 0.0
        && pts(no_cma) > 0.0
        && secs < 300.0;
    outcome(
        pass,
        format!(
            "segment Type@AV untrained {:.1}, full {:.1} ({:+.1} pts, need ≥ +30), w/o EMA {:.1} ({:+.1}), \
             w/o CMA {:.1} ({:+.1}); losses finite: {}",
            100.0 * untrained,
            100.0 * full,
            pts(full),
            100.0 * no_ema,
            pts(no_ema),
            100.0 * no_cma,
            pts(no_cma),
            full_finite && no_ema_finite && no_cma_finite
        ),
    )
}

// ---------------------------------------------------------------- 7

fn cli(args: &[&str]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = avvp_cli::run(std::iter::once("avvp").chain(args.iter().copied()), &mut out, &mut err);
    assert_eq!(code, 0, "avvp {args:?} failed: {}", String::from_utf8_lossy(&err));
    (code, out)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data.avvp");
    cli(&["generate", "--videos", "200", "--T", "10", "--C", "5", "--seed", "1", "--out", p(&data)]);
    for run in ["a", "b"] {
        let ck = d.join(format!("{run}.ckpt"));
        let log = d.join(format!("{run}.csv"));
        cli(&["train", "--data", p(&data), "--seed", "1", "--checkpoint-out", p(&ck), "--log-out", p(&log)]);
    }
    let read = |name: &str| std::fs::read(d.join(name)).unwrap();
    let same_ck = read("a.ckpt") == read("b.ckpt");
    let same_log = read("a.csv") == read("b.csv");
    let eval = || cli(&["eval", "--data", p(&data), "--checkpoint", p(&d.join("a.ckpt"))]).1;
    let (e1, e2) = (eval(), eval());
    outcome(
        same_ck && same_log && e1 == e2,
        format!(
            "checkpoints identical: {same_ck} ({} bytes); logs identical: {same_log}; eval output identical: {}",
            read("a.ckpt").len(),
            e1 == e2
        ),
    )
}

// ---------------------------------------------------------------- 8

/// Video-level BCE training written out directly: no teacher, no masks, no
/// agreement term, no loss combiner.
fn baseline_trajectory(data: &avvp_core::datagen::Dataset, cfg: &TrainConfig) -> (Vec<f64>, ModelParams) {
    let mut params = ModelParams::init(&cfg.model).unwrap();
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        for i in epoch_order(cfg.seed, epoch, data.len(), cfg.shuffle) {
            let v = &data.videos[i];
            let mut out = forward(&params, v).unwrap();
            let l = avvp_loss(&mut out.tape, out.p_video, &v.video_label).unwrap();
            losses.push(out.tape.value(l).item().unwrap());
            let grads = out.tape.backward(l).unwrap();
            let g = out.param_gradient(&grads);
            for (w, gw) in params.values_mut().iter_mut().zip(&g) {
                *w -= cfg.lr * gw;
            }
        }
    }
    (losses, params)
}

fn ablation_identity() -> Outcome {
    let data = generate(&GenConfig::default()).unwrap();
    let mut cfg = TrainConfig {
        enable_ema: false,
        enable_cma: false,
        ..TrainConfig::default()
    };
    cfg.fit_to(&data);
    let state = train(&data, &cfg, |_| {}).unwrap();
    let (baseline, params) = baseline_trajectory(&data, &cfg);
    let same_len = baseline.len() == state.history.len();
    let worst = state
        .history
        .iter()
        .zip(&baseline)
        .map(|(r, b)| (r.l_total - b).abs())
        .fold(0.0, f64::max);
    let param_drift = state
        .student
        .values()
        .iter()
        .zip(params.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    outcome(
        same_len && worst <= 1e-12,
        format!(
            "{} steps; max per-step |l_total − baseline| {worst:.1e} (need ≤ 1e-12); final param drift {param_drift:.1e}",
            baseline.len()
        ),
    )
}
