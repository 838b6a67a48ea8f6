//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Plain binary (no libtest harness) so the verdict lines always show up in
//! `cargo test` output. Exit status is non-zero if any gating criterion
//! fails. The tail-item sign test (6a) is directional and reported without
//! gating unless RECDIFF_STRICT_ACCEPTANCE=1. Criterion 8 needs the raw
//! MovieLens-1M `ratings.dat`; point RECDIFF_ML1M at it to run it.

mod common;

use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::{gradcheck, randn, rng};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use recdiff::autograd::{Tape, Var};
use recdiff::config::{ExperimentConfig, Seeds};
use recdiff::dataio::compute_strata;
use recdiff::diffusion::{
    diffusion_loss, make_schedule, q_sample, standard_normal, Denoiser, DiffusionConfig, NoiseDraw, NoisePredictor,
};
use recdiff::embeddings::{Adapter, AdapterConfig, SemanticMatrix};
use recdiff::encoder::{rank_of, score_items};
use recdiff::evaluation::{evaluate, hr_at_k, ndcg_at_k};
use recdiff::fusion::{Fusion, FusionConfig, FusionStrategy, GATE};
use recdiff::intent::{kmeans_fit, silhouette_score};
use recdiff::model::Model;
use recdiff::params::{Bound, ParamStore};
use recdiff::pipeline::{cmd_evaluate, cmd_prepare, cmd_train, PrepareArgs, LOG_FILE, REPORT_JSON, REPORT_TXT};
use recdiff::synthetic::{generate, SyntheticSpec};
use recdiff::tensor::Matrix;
use recdiff::training::{align_term, fit, infonce_term, rec_term, training_samples, LossWeights, Objective, Term, Trainer};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

// ---------------------------------------------------------------- 1

fn metrics() -> Check {
    let mut r = rng(0);
    for inst in 0..1000 {
        let n = r.gen_range(2..=20);
        let d = r.gen_range(1..=3);
        let table = Matrix::from_vec(n, d, (0..n * d).map(|_| r.gen_range(-2..=2) as f64).collect()).unwrap();
        let mut ranks = Vec::new();
        let mut brute = Vec::new();
        for _ in 0..r.gen_range(1..=6) {
            let h: Vec<f64> = (0..d).map(|_| r.gen_range(-2..=2) as f64).collect();
            let target = r.gen_range(0..n);
            let scores = score_items(&h, &table).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            ranks.push(rank_of(&scores, target, None));
            brute.push(order.iter().position(|&j| j == target).unwrap() + 1);
        }
        ensure!(ranks == brute, "instance {inst}: ranks {ranks:?} vs sorted {brute:?}");
        for k in [1, 5, 10] {
            let hr = brute.iter().filter(|&&p| p <= k).count() as f64 / brute.len() as f64;
            let dcg = brute.iter().filter(|&&p| p <= k).map(|&p| 1.0 / ((p + 1) as f64).log2()).sum::<f64>() / brute.len() as f64;
            ensure!(hr_at_k(&ranks, k).unwrap() == hr && ndcg_at_k(&ranks, k).unwrap() == dcg, "instance {inst}, k={k}");
        }
    }
    let one = ndcg_at_k(&[1], 10).unwrap();
    let three = ndcg_at_k(&[3], 10).unwrap();
    ensure!((one - 1.0).abs() <= 1e-12 && (three - 0.5).abs() <= 1e-12, "NDCG analytic cases: {one}, {three}");
    Ok("1000 instances exact; NDCG(rank 1)=1, NDCG@10(rank 3)=0.5".into())
}

// ---------------------------------------------------------------- 2

struct Zero;
impl NoisePredictor for Zero {
    fn predict(&self, x_t: &Matrix, _: &Matrix, _: &[usize]) -> recdiff::Result<Matrix> {
        Ok(Matrix::zeros(x_t.rows(), x_t.cols()))
    }
}

struct Knows(Matrix);
impl NoisePredictor for Knows {
    fn predict(&self, _: &Matrix, _: &Matrix, _: &[usize]) -> recdiff::Result<Matrix> {
        Ok(self.0.clone())
    }
}

fn diffusion() -> Check {
    let s = make_schedule(50, 1e-4, 0.02).unwrap();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let x0 = standard_normal(&mut r, 1, 8).into_vec();
        let eps = standard_normal(&mut r, 1, 8).into_vec();
        let same = q_sample(&x0, 0, &eps, &s).unwrap();
        worst = same.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        let t = r.gen_range(1..=50);
        let sd = (1.0 - s.alpha_bar(t)).sqrt();
        let pure = q_sample(&[0.0; 8], t, &eps, &s).unwrap();
        worst = pure.iter().zip(&eps).map(|(a, e)| (a - sd * e).abs()).fold(worst, f64::max);
    }
    ensure!(worst <= 1e-7, "q_sample identity error {worst:e}");
    let x0 = standard_normal(&mut r, 32, 8);
    let draw = NoiseDraw::sample(&mut r, 32, 8, &s);
    let oracle = diffusion_loss(&Knows(draw.eps.clone()), &x0, &x0, &s, &draw).unwrap();
    ensure!(oracle == 0.0, "oracle loss {oracle}");
    let (n, d) = (10_000, 8);
    let x0 = standard_normal(&mut r, n, d);
    let draw = NoiseDraw::sample(&mut r, n, d, &s);
    let zero = diffusion_loss(&Zero, &x0, &x0, &s, &draw).unwrap();
    let per: Vec<f64> = (0..d).map(|c| (0..n).map(|i| draw.eps.get(i, c).powi(2)).sum::<f64>() / n as f64).collect();
    let dev = per.iter().map(|p| (p - 1.0).abs()).fold((zero - 1.0).abs(), f64::max);
    ensure!(dev <= 0.05, "zero-predictor loss {zero}, per-dimension {per:?}");
    Ok(format!("identity err {worst:.1e}; oracle loss 0; zero-predictor loss {zero:.4} (max dev {dev:.4})"))
}

// ---------------------------------------------------------------- 3

fn probe(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let (r, c) = tape.value(y).shape();
    let w = tape.constant(randn(r, c, seed));
    let p = tape.mul(y, w);
    tape.sum(p)
}

fn gradients() -> Check {
    let mut cases: Vec<(String, f64)> = Vec::new();
    for (strategy, alpha) in [
        (FusionStrategy::Gated, None),
        (FusionStrategy::Weighted, None),
        (FusionStrategy::Weighted, Some(0.3)),
        (FusionStrategy::Concat, None),
        (FusionStrategy::CrossAttention, None),
    ] {
        let fusion = Fusion::new(FusionConfig { strategy, weighted_alpha: alpha, ca_heads: 1 }, 4).unwrap();
        let mut p = ParamStore::new();
        fusion.init(&mut p, &mut rng(1));
        p.insert("x.e", randn(3, 4, 2));
        p.insert("x.s", randn(3, 4, 3));
        let e = gradcheck(&p, |t: &mut Tape, b: &Bound| {
            let y = fusion.forward(t, b, b.var("x.e"), b.var("x.s")).unwrap();
            probe(t, y, 4)
        });
        cases.push((format!("fusion {strategy:?}"), e));
    }
    let adapter = Adapter::new(5, 3, AdapterConfig { layers: 2, ..Default::default() }).unwrap();
    let mut p = ParamStore::new();
    adapter.init(&mut p, &mut rng(5));
    let x = randn(4, 5, 6);
    cases.push((
        "adapter".into(),
        gradcheck(&p, |t: &mut Tape, b: &Bound| {
            let xv = t.constant(x.clone());
            let y = adapter.forward(t, b, xv).unwrap();
            probe(t, y, 7)
        }),
    ));
    let cfg = DiffusionConfig { steps: 10, hidden_width: 6, time_dim: 4, ..Default::default() };
    let den = Denoiser::new(3, &cfg).unwrap();
    let mut p = ParamStore::new();
    den.init(&mut p, &mut rng(8));
    let sched = make_schedule(10, 1e-4, 0.02).unwrap();
    let draw = NoiseDraw::sample(&mut rng(9), 4, 3, &sched);
    let (x0, s) = (randn(4, 3, 10), randn(4, 3, 11));
    cases.push((
        "denoiser / diffusion loss".into(),
        gradcheck(&p, |t: &mut Tape, b: &Bound| {
            let (xv, sv) = (t.constant(x0.clone()), t.constant(s.clone()));
            den.loss(t, b, xv, sv, &sched, &draw).unwrap()
        }),
    ));
    let mut p = ParamStore::new();
    p.insert("a", randn(4, 3, 12));
    p.insert("b", randn(4, 3, 13));
    p.insert("table", randn(6, 3, 14));
    cases.push(("rec loss".into(), gradcheck(&p, |t, b| rec_term(t, b.var("a"), b.var("table"), &[0, 5, 2, 2]).unwrap())));
    cases.push(("contrastive loss".into(), gradcheck(&p, |t, b| infonce_term(t, b.var("a"), b.var("b"), 0.5).unwrap())));
    cases.push(("alignment loss".into(), gradcheck(&p, |t, b| align_term(t, b.var("a"), b.var("b")).unwrap())));

    let worst = cases.iter().map(|c| c.1).fold(0.0, f64::max);
    if let Some((name, e)) = cases.iter().find(|c| c.1 > 1e-4) {
        return Err(format!("{name}: relative error {e:e}"));
    }

    // frozen semantics: the constant leaf receives exactly zero gradient
    let c = common::tiny_config();
    let rows: Vec<Vec<f32>> = (0..5).map(|i| (0..6).map(|j| ((i * 6 + j) as f32).sin()).collect()).collect();
    let sem = SemanticMatrix::from_rows(&rows, "t").unwrap();
    let model = Model::new(5, 6, &c.embedding, &c.fusion, &c.encoder, &c.diffusion).unwrap();
    let params = model.init(&mut rng(15));
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let sv = tape.constant(sem.items_matrix());
    let v = model.item_views(&mut tape, &b, sv).unwrap();
    let a = probe(&mut tape, v.fused, 16);
    let al = align_term(&mut tape, v.e_id, v.adapted.unwrap()).unwrap();
    let loss = tape.add(a, al);
    let g = tape.backward(loss);
    ensure!(g.get(sv).map_or(true, |m| m.data().iter().all(|&x| x == 0.0)), "semantic matrix received a gradient");
    Ok(format!("{} checks, worst relative error {worst:.1e}; semantic gradient exactly 0", cases.len()))
}

// ---------------------------------------------------------------- 4

fn kmeans() -> Check {
    let mut r = rng(2);
    for inst in 0..100 {
        let n = r.gen_range(10..80);
        let k = r.gen_range(2..6);
        let x = randn(n, r.gen_range(1..6), 100 + inst);
        let fit = kmeans_fit(&x, k, 100, inst).unwrap();
        for w in fit.inertia_history.windows(2) {
            ensure!(w[1] <= w[0] * (1.0 + 1e-12), "instance {inst}: inertia {} -> {}", w[0], w[1]);
        }
    }
    let noise = Normal::new(0.0, 1.0).unwrap();
    let blob = |c: &[f64], n: usize, r: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n).map(|_| c.iter().map(|v| v + noise.sample(r)).collect()).collect()
    };
    let mut rows = blob(&[-10.0, 0.0], 40, &mut r);
    rows.extend(blob(&[10.0, 5.0], 40, &mut r));
    let x = Matrix::from_rows(&rows).unwrap();
    let fit = kmeans_fit(&x, 2, 100, 0).unwrap();
    let mut mean_err: f64 = 0.0;
    for half in [0..40, 40..80] {
        let mean: Vec<f64> = (0..2).map(|c| half.clone().map(|i| x.get(i, c)).sum::<f64>() / 40.0).collect();
        let got = fit.prototypes.centroids.row(fit.labels[half.start]);
        mean_err = got.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(mean_err, f64::max);
    }
    ensure!(mean_err <= 1e-6, "blob means off by {mean_err:e}");
    let mut rows = blob(&[0.0, 0.0], 30, &mut r);
    rows.extend(blob(&[50.0, 50.0], 30, &mut r));
    let far = silhouette_score(&Matrix::from_rows(&rows).unwrap(), &[vec![0; 30], vec![1; 30]].concat()).unwrap();
    ensure!(far > 0.9, "far-blob silhouette {far}");
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = Matrix::from_rows(&blob(&[0.0, 0.0, 0.0], 200, &mut r)).unwrap();
        let labels: Vec<usize> = (0..200).map(|_| r.gen_range(0..3)).collect();
        worst = worst.max(silhouette_score(&x, &labels).unwrap().abs());
    }
    ensure!(worst <= 0.1, "random-label silhouette reached {worst}");
    Ok(format!("monotone inertia x100; blob mean err {mean_err:.1e}; far blobs {far:.3}; random |s| <= {worst:.3}"))
}

// ---------------------------------------------------------------- 5

fn ablation_algebra() -> Check {
    let data = generate(&SyntheticSpec { users: 60, items: 40, semantic_dim: 6, ..Default::default() }).unwrap();
    let config = common::tiny_config();
    let run = |o: Objective| {
        let mut tr = Trainer::with_objective(&data.dataset, &data.semantic, &config, o).unwrap();
        let samples = training_samples(&data.dataset);
        let batches = tr.epoch_batches(&samples);
        for b in batches.iter().cycle().take(9) {
            tr.step(b).unwrap();
        }
        tr.params
    };
    let base = LossWeights { lambda_rec: 1.0, lambda_diff: 0.5, lambda_cl: 0.2, lambda_align: 0.3, temperature: 0.5 };
    for t in Term::ALL {
        let mut w = base.clone();
        match t {
            Term::Rec => w.lambda_rec = 0.0,
            Term::Diff => w.lambda_diff = 0.0,
            Term::Cl => w.lambda_cl = 0.0,
            Term::Align => w.lambda_align = 0.0,
        }
        let mut include = [true; 4];
        include[t as usize] = false;
        let a = run(Objective { weights: w.clone(), include: [true; 4] });
        let b = run(Objective { weights: w, include });
        for ((n, x), (_, y)) in a.iter().zip(b.iter()) {
            ensure!(
                x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()),
                "lambda_{}=0 differs from removal in `{n}`",
                t.name()
            );
        }
    }

    let mut c = config.clone();
    c.encoder.dropout = 0.0;
    let tr = Trainer::new(&data.dataset, &data.semantic, &c).unwrap();
    let mut gated = tr.params.clone();
    let w = gated.get_mut(&format!("{GATE}.weight")).unwrap();
    *w = Matrix::zeros(w.rows(), w.cols());
    gated.get_mut(&format!("{GATE}.bias")).unwrap().data_mut().iter_mut().for_each(|v| *v = 30.0);
    c.fusion.strategy = FusionStrategy::IdOnly;
    let id = Model::new(data.dataset.n_items(), 6, &c.embedding, &c.fusion, &c.encoder, &c.diffusion).unwrap();
    let mut id_params = ParamStore::new();
    for n in id.init(&mut rng(0)).names() {
        id_params.insert(n.clone(), gated.get(n).unwrap().clone());
    }
    let sem = data.semantic.items_matrix();
    let (fg, _) = tr.model.tables(&gated, &sem).unwrap();
    let (fi, _) = id.tables(&id_params, &sem).unwrap();
    let seqs: Vec<&[usize]> = data.dataset.users.iter().map(|u| recdiff::dataio::truncate_recent(&u.train, 10)).collect();
    let hg = tr.model.encode(&gated, &fg, &seqs, 64).unwrap();
    let hi = id.encode(&id_params, &fi, &seqs, 64).unwrap();
    let gap = hg.data().iter().zip(hi.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(gap <= 1e-6, "saturated gate differs from ID-only by {gap:e}");
    Ok(format!("4 terms bitwise identical; saturated gate gap {gap:.1e}"))
}

// ---------------------------------------------------------------- 6

fn directional_config(seed: u64, full: bool) -> ExperimentConfig {
    let mut c = ExperimentConfig::with_data_dir("unused");
    c.embedding.dim = 32;
    c.encoder.max_len = 20;
    c.encoder.heads = 2;
    c.encoder.layers = 1;
    c.intent.k = 4;
    c.intent.clustering_interval = 20;
    c.diffusion.steps = 20;
    c.diffusion.hidden_width = 64;
    c.train.batch_size = 128;
    c.train.epochs = 25;
    c.train.patience = 100;
    c.seeds = Seeds::from_base(seed);
    if !full {
        c.fusion.strategy = FusionStrategy::IdOnly;
        c.loss.lambda_diff = 0.0;
        c.loss.lambda_cl = 0.0;
        c.loss.lambda_align = 0.0;
    }
    c
}

/// (tail verdict, silhouette verdict)
fn directional() -> (Check, Check) {
    let mut tail_wins = 0;
    let mut sil_wins = 0;
    let mut detail = String::new();
    for seed in 0..5 {
        let data = generate(&SyntheticSpec { seed, ..Default::default() }).unwrap();
        let strata = compute_strata(&data.dataset, 0.2, 5).unwrap();
        let mut reports = Vec::new();
        for full in [true, false] {
            let out = fit(&data.dataset, &data.semantic, &directional_config(seed, full)).unwrap();
            reports.push(evaluate(&out.checkpoint, &data.dataset, &strata).unwrap());
        }
        let (f, b) = (&reports[0], &reports[1]);
        let (ft, bt) = (f.tail_item.hr10.unwrap_or(0.0), b.tail_item.hr10.unwrap_or(0.0));
        let (fs, bs) = (f.silhouette.unwrap_or(f64::NAN), b.silhouette.unwrap_or(f64::NAN));
        tail_wins += usize::from(ft > bt);
        sil_wins += usize::from(fs > bs);
        let _ = write!(
            detail,
            "\n    seed {seed}: tail HR@10 {ft:.3} vs {bt:.3} ({} tail users), silhouette {fs:.3} vs {bs:.3}",
            f.tail_item.users
        );
    }
    let tail = format!("full beats ID-only on tail HR@10 in {tail_wins}/5 seeds{detail}");
    let sil = format!("fused silhouette higher in {sil_wins}/5 seeds");
    (if tail_wins == 5 { Ok(tail) } else { Err(tail) }, if sil_wins >= 4 { Ok(sil) } else { Err(sil) })
}

// ---------------------------------------------------------------- 7

const PIPELINE_CONFIG: &str = r#"
[data]
dir = "prep"

[embedding]
dim = 16
pseudo_dim = 12

[fusion]
strategy = "gated"

[encoder]
heads = 2
layers = 1
max_len = 20

[intent]
k = 4
clustering_interval = 10

[diffusion]
steps = 10
hidden_width = 16
time_dim = 8

[train]
batch_size = 64
epochs = 3
"#;

fn pipeline_run(root: &Path) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let data = generate(&SyntheticSpec { users: 120, items: 60, ..Default::default() }).unwrap();
    let mut csv = String::from("user,item,timestamp\n");
    for r in &data.interactions {
        let _ = writeln!(csv, "{},{},{}", r.user, r.item, r.timestamp);
    }
    fs::create_dir_all(root).unwrap();
    fs::write(root.join("log.csv"), csv).unwrap();
    cmd_prepare(&PrepareArgs {
        raw: &root.join("log.csv"),
        kind: "toys",
        out: &root.join("prep"),
        format: None,
        attributes: None,
        min_count: 5,
        tail_fraction: 0.2,
        cold_threshold: 5,
    })
    .unwrap();
    fs::write(root.join("config.toml"), PIPELINE_CONFIG).unwrap();
    let run = cmd_train(&root.join("config.toml"), &[], Some(&root.join("train"))).unwrap();
    cmd_evaluate(&run.dir.join(recdiff::pipeline::CHECKPOINT_FILE), None, &root.join("eval")).unwrap();
    let read = |p: &Path| fs::read(p).unwrap();
    (read(&root.join("train").join(LOG_FILE)), read(&root.join("eval").join(REPORT_JSON)), read(&root.join("eval").join(REPORT_TXT)))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let a = pipeline_run(&dir.path().join("a"));
    let b = pipeline_run(&dir.path().join("b"));
    let epochs = a.0.iter().filter(|&&c| c == b'\n').count();
    ensure!(epochs == 3, "log has {epochs} lines");
    ensure!(a.0 == b.0, "training logs differ");
    ensure!(a.1 == b.1 && a.2 == b.2, "evaluation reports differ");
    Ok(format!("{epochs}-epoch logs and reports byte-identical ({} + {} bytes)", a.0.len(), a.1.len()))
}

// ---------------------------------------------------------------- 8

fn movielens(ratings: &Path) -> Check {
    let text = fs::read_to_string(ratings).map_err(|e| format!("{}: {e}", ratings.display()))?;
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("user,item,timestamp\n");
    for line in text.lines().filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split("::").collect();
        ensure!(f.len() == 4, "unexpected line `{line}`");
        let _ = writeln!(csv, "{},{},{}", f[0], f[1], f[3]);
    }
    fs::write(dir.path().join("ratings.csv"), csv).unwrap();
    let m = cmd_prepare(&PrepareArgs {
        raw: &dir.path().join("ratings.csv"),
        kind: "ml1m",
        out: &dir.path().join("prep"),
        format: None,
        attributes: None,
        min_count: 5,
        tail_fraction: 0.2,
        cold_threshold: 5,
    })
    .map_err(|e| e.to_string())?;
    let got = format!("{} users, {} items", m.counts.users, m.counts.items);
    ensure!(m.counts.users == 6041 && m.counts.items == 3417, "{got}; expected 6041 users, 3417 items");
    Ok(got)
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn main() {
    let strict = std::env::var("RECDIFF_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    let mut failed = Vec::new();
    let mut verdict = |id: &str, what: &str, limit: Option<f64>, gating: bool, f: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let mut res = guarded(f);
        let secs = t.elapsed().as_secs_f64();
        if let (Some(l), Ok(msg)) = (limit, &res) {
            if secs > l {
                res = Err(format!("{msg}; took {secs:.1}s, limit {l:.0}s"));
            }
        }
        let (tag, msg) = match &res {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        let note = if res.is_err() && !gating { " [directional, not gating]" } else { "" };
        println!("criterion {id}: {tag} - {what}: {msg} ({secs:.1}s){note}");
        if res.is_err() && gating {
            failed.push(id.to_string());
        }
    };

    verdict("1", "metric oracles", Some(10.0), true, &mut metrics);
    verdict("2", "diffusion identities", Some(30.0), true, &mut diffusion);
    verdict("3", "gradient suite", Some(120.0), true, &mut gradients);
    verdict("4", "k-means and silhouette", Some(60.0), true, &mut kmeans);
    verdict("5", "ablation algebra", None, true, &mut ablation_algebra);

    let t = Instant::now();
    let (tail, sil) = catch_unwind(directional).unwrap_or_else(|_| {
        let e = "panicked".to_string();
        (Err(e.clone()), Err(e))
    });
    let secs = t.elapsed().as_secs_f64();
    let within = |r: Check| match r {
        Ok(m) if secs > 1200.0 => Err(format!("{m}; took {secs:.0}s, limit 1200s")),
        other => other,
    };
    let mut tail = Some(within(tail));
    let mut sil = Some(within(sil));
    verdict("6a", "tail-item HR@10 sign test", None, strict, &mut || tail.take().unwrap());
    verdict("6b", "silhouette direction", None, true, &mut || sil.take().unwrap());
    println!("criterion 6: directional experiments took {secs:.0}s (limit 1200s)");

    verdict("7", "pipeline determinism", None, true, &mut determinism);

    match std::env::var_os("RECDIFF_ML1M") {
        Some(p) => verdict("8", "MovieLens-1M statistics", None, true, &mut || movielens(Path::new(&p))),
        None => println!("criterion 8: SKIP - set RECDIFF_ML1M to the raw ratings.dat to run it"),
    }

    if failed.is_empty() {
        println!("acceptance: all gating criteria passed");
    } else {
        println!("acceptance: failed criteria {}", failed.join(", "));
        std::process::exit(1);
    }
}
