mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_dtw, brute_frechet, random_polyline, rdp_oracle};
use trajflow::checkpoint::Checkpoint;
use trajflow::condition::{Condition, ConditionEncoder, ConditionSpec, EncoderDims, TimeEmbedding, Vocab};
use trajflow::config::{Paradigm, TrainConfig};
use trajflow::diffusion::{ddpm_draws, ddpm_loss_with, snr_crossing, snr_profile, NoiseSchedule, DEFAULT_T};
use trajflow::flow::{cfm_draws, cfm_loss_with, standard_normal_vec, LossWeights, PreparedSample};
use trajflow::generate::{generate, GenerationRequest};
use trajflow::geo::{denormalize, normalize_trajectory, FeatureScaler, NumericFeatures};
use trajflow::harmonize::{compression_benchmark, rdp, Method};
use trajflow::io::trajectory_to_json;
use trajflow::metrics::{density_histogram, dtw, frechet, js_divergence, per_mode_distances};
use trajflow::model::{Architecture, VectorFieldModel, OD_DIM};
use trajflow::nn::{gradient_check, normal_init, Dense, Grads, ParamId, ParamStore, Tape, Var};
use trajflow::synth::{make_dataset, make_world, make_world_with_curvature, sample_range, Scale, World};
use trajflow::threads::THREADS_ENV;
use trajflow::{pipeline, TransportMode, Trajectory};

const RDP_CASES: usize = 1000;
const RDP_MAX_LEN: usize = 50;
const RDP_BUDGET: Duration = Duration::from_secs(10);

const METRIC_CASES: usize = 500;
const METRIC_MAX_LEN: usize = 6;
const METRIC_BUDGET: Duration = Duration::from_secs(30);

const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

const BENCH_SIZE: usize = 2000;
const BENCH_CURVATURE: f64 = 0.6;
const BENCH_KS: [usize; 4] = [5, 10, 20, 30];
const BENCH_L: usize = 120;
const BENCH_BUDGET: Duration = Duration::from_secs(120);

const WORLD_SEED: u64 = 11;
const DATA_SIZE: usize = 5000;
const DATA_SEED: u64 = 1;
const HELD_OUT: usize = 2000;
const JS_BINS: (usize, usize) = (64, 64);
const JS_LIMIT: f64 = 0.15;
const TRAIN_BUDGET: Duration = Duration::from_secs(30 * 60);
const COMPARE_BUDGET: Duration = Duration::from_secs(60 * 60);
const GEN_SEED: u64 = 5;
const FLOW_STEPS: usize = 10;
const DDIM_STEPS: [usize; 3] = [10, 50, 200];
const DDIM_SLACK: f64 = 0.02;

const SNR_SCALE: f64 = 1.0;
const SNR_BUDGET: Duration = Duration::from_secs(1);

const ROUND_TRIP_TOL: f64 = 1e-9;
const FIDELITY_SAMPLES: usize = 1000;
const FIDELITY_SHARE: f64 = 0.95;

fn toy_config(paradigm: Paradigm) -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        lr: 1e-3,
        epochs: 50,
        k: 10,
        blocks: 4,
        width: 128,
        control_dim: 64,
        cond_hidden: 128,
        seed: 3,
        paradigm,
        plateau_patience: 5,
        ..TrainConfig::default()
    }
}

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0;
    for _ in 0..RDP_CASES {
        let n = rng.random_range(2..=RDP_MAX_LEN);
        let path = random_polyline(n, &mut rng);
        let eps = rng.random_range(0.0..2.0);
        if rdp(&path, eps).unwrap() != rdp_oracle(&path, eps) {
            mismatches += 1;
        }
    }
    let took = start.elapsed();
    verdict(
        mismatches == 0 && took < RDP_BUDGET,
        format!("{mismatches} mismatches in {RDP_CASES} polylines, {:.2}s", took.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut mismatches = 0;
    for _ in 0..METRIC_CASES {
        let a = random_polyline(rng.random_range(1..=METRIC_MAX_LEN), &mut rng);
        let b = random_polyline(rng.random_range(1..=METRIC_MAX_LEN), &mut rng);
        let d = dtw(&a, &b).unwrap();
        let f = frechet(&a, &b).unwrap();
        if (d - brute_dtw(&a, &b)).abs() > 1e-12 * (1.0 + d) || f != brute_frechet(&a, &b) {
            mismatches += 1;
        }
    }
    let took = start.elapsed();
    verdict(
        mismatches == 0 && took < METRIC_BUDGET,
        format!("{mismatches} mismatches in {METRIC_CASES} pairs, {:.2}s", took.as_secs_f64()),
    )
}

/// Quadratic probe with fixed positive weights so every output entry matters.
fn probe(tape: &mut Tape<'_>, y: Var, seed: u64) -> trajflow::Result<Var> {
    let dim = tape.value(y).raw_dim();
    let w = normal_init(dim[0], dim[1], 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).mapv(f64::abs) + 0.1;
    tape.weighted_sse(y, Array2::zeros(dim), w, 1.0)
}

fn small_arch() -> Architecture {
    Architecture {
        k: 3,
        width: 6,
        blocks: 2,
        control_dim: 4,
        cond_hidden: 5,
        embed_dim: 2,
        zones: 4,
    }
}

fn spec(mode: TransportMode, origin: u32, destination: u32) -> ConditionSpec {
    ConditionSpec {
        departure_bin: 17,
        origin_zone: origin,
        destination_zone: destination,
        mode,
        numeric: NumericFeatures::from_array([3.0, 0.4, 600.0, 1.5, 60.0]),
    }
}

fn conditions() -> Vec<Condition> {
    vec![
        Condition::Spec(spec(TransportMode::Car, 0, 3)),
        Condition::Null,
        Condition::Spec(spec(TransportMode::Walk, 2, 1)),
    ]
}

/// Model whose embedding rows are large enough that layer norm sees real variance.
fn gradient_model(seed: u64) -> VectorFieldModel {
    let mut m = VectorFieldModel::new(small_arch(), FeatureScaler::identity(), seed).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed + 100);
    for p in m.store.iter_mut() {
        if p.name.starts_with("cond.emb") || p.name.ends_with(".bias") {
            p.value = normal_init(p.value.nrows(), p.value.ncols(), 1.0, &mut r);
        }
    }
    m
}

fn prepared_samples(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<PreparedSample> {
    (0..n)
        .map(|i| PreparedSample {
            id: format!("s{i}"),
            x1: standard_normal_vec(dim, rng),
            mask: vec![1.0; dim],
            od: [0.3, -0.2, 0.6, 0.1],
            spec: spec(TransportMode::ALL[i % 5], (i % 4) as u32, ((i + 1) % 4) as u32),
        })
        .collect()
}

/// Central finite differences of a black-box loss against its reported gradients.
fn loss_fd_error(model: &VectorFieldModel, loss: impl Fn(&VectorFieldModel) -> (f64, Grads)) -> f64 {
    let (_, grads) = loss(model);
    let mut m = model.clone();
    let mut worst: f64 = 0.0;
    for pi in 0..m.store.len() {
        let id = ParamId(pi);
        let shape = m.store.get(id).value.dim();
        let an = grads.get(id).cloned().unwrap_or_else(|| Array2::zeros(shape));
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = m.store.get(id).value[[r, c]];
                m.store.get_mut(id).value[[r, c]] = orig + FD_STEP;
                let plus = loss(&m).0;
                m.store.get_mut(id).value[[r, c]] = orig - FD_STEP;
                let minus = loss(&m).0;
                m.store.get_mut(id).value[[r, c]] = orig;
                let fd = (plus - minus) / (2.0 * FD_STEP);
                let a = an[[r, c]];
                worst = worst.max((fd - a).abs() / (fd.abs() + a.abs()).max(1e-8));
            }
        }
    }
    worst
}

fn criterion_3() -> Outcome {
    let mut checks: Vec<(&str, f64)> = Vec::new();
    let mut r = ChaCha8Rng::seed_from_u64(303);

    let mut store = ParamStore::new();
    let x = store.add("x", normal_init(3, 4, 1.0, &mut r));
    let dense = Dense::new(&mut store, "dense", 4, 5, true, &mut r);
    store.get_mut(dense.b.unwrap()).value = normal_init(1, 5, 0.5, &mut r);
    let gamma = store.add("gamma", normal_init(1, 5, 1.0, &mut r));
    let beta = store.add("beta", normal_init(1, 5, 1.0, &mut r));
    let table = store.add("table", normal_init(4, 5, 1.0, &mut r));
    let c = normal_init(5, 2, 1.0, &mut r);
    checks.push((
        "dense",
        gradient_check(&mut store, |t| {
            let xv = t.param(x);
            let y = dense.forward(t, xv)?;
            probe(t, y, 1)
        }, FD_STEP)
        .unwrap(),
    ));
    checks.push((
        "silu+layer_norm",
        gradient_check(&mut store, |t| {
            let xv = t.param(x);
            let y = dense.forward(t, xv)?;
            let s = t.silu(y);
            let (g, b) = (t.param(gamma), t.param(beta));
            let n = t.layer_norm(s, g, b)?;
            probe(t, n, 2)
        }, FD_STEP)
        .unwrap(),
    ));
    checks.push((
        "embedding+concat",
        gradient_check(&mut store, |t| {
            let tb = t.param(table);
            let e = t.embedding(tb, vec![3, 0, 3])?;
            let xv = t.param(x);
            let y = t.concat(&[e, xv])?;
            probe(t, y, 3)
        }, FD_STEP)
        .unwrap(),
    ));
    checks.push((
        "auxiliary ops",
        gradient_check(&mut store, |t| {
            let xv = t.param(x);
            let y = dense.forward(t, xv)?;
            let s = t.scale_rows(y, ndarray::array![0.5, -1.0, 2.0])?;
            let m = t.matmul_const(s, c.clone())?;
            let a = t.mean_square(m);
            let h = t.hinge_sq(y, 0.5);
            let d = t.sub(a, h)?;
            Ok(t.scale(d, 2.0))
        }, FD_STEP)
        .unwrap(),
    ));

    let mut enc_store = ParamStore::new();
    let dims = EncoderDims {
        control_dim: 6,
        hidden: 7,
        embed_dim: 3,
    };
    let enc = ConditionEncoder::new(&mut enc_store, Vocab { zones: 4 }, dims, &mut r);
    for p in enc_store.iter_mut() {
        if p.name.starts_with("cond.emb") {
            p.value.mapv_inplace(|v| v * 40.0);
        }
    }
    let conds = conditions();
    checks.push((
        "condition encoder",
        gradient_check(&mut enc_store, |t| {
            let e = enc.encode(t, &conds, &FeatureScaler::identity())?;
            probe(t, e, 4)
        }, FD_STEP)
        .unwrap(),
    ));

    let mut time_store = ParamStore::new();
    let te = TimeEmbedding::new(&mut time_store, 5, &mut r);
    checks.push((
        "time embedding",
        gradient_check(&mut time_store, |t| {
            let e = te.forward(t, &[0.05, 0.5, 0.95])?;
            probe(t, e, 5)
        }, FD_STEP)
        .unwrap(),
    ));

    let mut m = gradient_model(6);
    let x_in = normal_init(3, 6, 1.0, &mut r);
    let od_target = normal_init(3, OD_DIM, 1.0, &mut r);
    let model = m.clone();
    checks.push((
        "full network",
        gradient_check(&mut m.store, |t| {
            let f = model.forward(t, x_in.clone(), &[0.1, 0.6, 0.95], &conds)?;
            let l1 = probe(t, f.output, 6)?;
            let od = model.od_head(t, f.e_c)?;
            let l2 = t.weighted_sse(od, od_target.clone(), Array2::ones((3, OD_DIM)), 1.0)?;
            t.add(l1, l2)
        }, FD_STEP)
        .unwrap(),
    ));

    let weights = LossWeights {
        lambda_od: 1.0,
        smooth_w: 0.5,
        bound_w: 0.5,
    };
    let model = gradient_model(7);
    let samples = prepared_samples(3, 6, &mut r);
    let refs: Vec<&PreparedSample> = samples.iter().collect();
    let mut draws = cfm_draws(3, 6, 0.0, &mut r).unwrap();
    draws[1].dropped = true;
    checks.push((
        "flow matching loss",
        loss_fd_error(&model, |m| {
            let (l, g) = cfm_loss_with(m, &refs, &draws, &weights).unwrap();
            (l.total, g)
        }),
    ));
    let schedule = NoiseSchedule::paper(20).unwrap();
    let mut ddraws = ddpm_draws(3, 6, &schedule, 0.0, &mut r).unwrap();
    ddraws[2].dropped = true;
    checks.push((
        "diffusion loss",
        loss_fd_error(&model, |m| {
            let (l, g) = ddpm_loss_with(m, &refs, &ddraws, &schedule, &weights).unwrap();
            (l.total, g)
        }),
    ));

    let worst = checks.iter().map(|c| c.1).fold(0.0, f64::max);
    let detail = checks.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(worst < GRAD_TOL, format!("max rel err {worst:.1e} ({detail})"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let world = make_world_with_curvature(404, Scale::Urban, BENCH_CURVATURE);
    let data = sample_range(&world, 404, 0, BENCH_SIZE).unwrap();
    let rows = compression_benchmark(&data, &[Method::RdpK, Method::DirectK], &BENCH_KS, BENCH_L).unwrap();
    let took = start.elapsed();
    let mean = |m: Method, k: usize| rows.iter().find(|r| r.method == m && r.k == k).unwrap().mean_dtw_km;
    let rdp_curve: Vec<f64> = BENCH_KS.iter().map(|&k| mean(Method::RdpK, k)).collect();
    let monotone = rdp_curve.windows(2).all(|w| w[1] <= w[0]);
    let beats = [5, 10].iter().all(|&k| mean(Method::RdpK, k) <= mean(Method::DirectK, k));
    let skipped: usize = rows.iter().map(|r| r.n_skipped).sum();
    verdict(
        monotone && beats && skipped == 0 && took < BENCH_BUDGET,
        format!(
            "rdp_k dtw {:?} km, direct_k K=5 {:.3} K=10 {:.3}, {skipped} skipped, {:.1}s",
            rdp_curve.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            mean(Method::DirectK, 5),
            mean(Method::DirectK, 10),
            took.as_secs_f64()
        ),
    )
}

/// The toy world, its training set, held-out trajectories and their requests.
struct Toy {
    world: World,
    dataset: trajflow::synth::Dataset,
    held: Vec<Trajectory>,
    requests: Vec<GenerationRequest>,
}

impl Toy {
    fn new() -> Self {
        let world = make_world(WORLD_SEED, Scale::Urban);
        let dataset = make_dataset(&world, DATA_SIZE, DATA_SEED).unwrap();
        let held = sample_range(&world, DATA_SEED, DATA_SIZE as u64, HELD_OUT).unwrap();
        let refs: Vec<&Trajectory> = held.iter().collect();
        let specs = pipeline::specs_of(&refs).unwrap();
        let requests = pipeline::requests(&specs, specs.len(), TrainConfig::default().l).unwrap();
        Self {
            world,
            dataset,
            held,
            requests,
        }
    }

    fn train(&self, cfg: &TrainConfig) -> Checkpoint {
        pipeline::fit(&self.dataset, cfg, None, |_| {}).unwrap().0
    }

    /// Generated trajectories, density JS against the held-out set and seconds per sample.
    fn evaluate(&self, ck: &Checkpoint, steps: usize) -> (Vec<Trajectory>, f64, f64) {
        let model = ck.model().unwrap();
        let sampler = ck.sampler(steps, 0.0).unwrap();
        let start = Instant::now();
        let generated = generate(&model, &sampler, &self.world, &self.requests, GEN_SEED).unwrap();
        let per_sample = start.elapsed().as_secs_f64() / generated.len() as f64;
        let p = density_histogram(&self.held, self.world.bbox, JS_BINS).unwrap();
        let q = density_histogram(&generated, self.world.bbox, JS_BINS).unwrap();
        (generated, js_divergence(&p, &q).unwrap(), per_sample)
    }
}

struct FlowRun {
    generated: Vec<Trajectory>,
    js: f64,
    sec_per_sample: f64,
}

fn criterion_5(toy: &Toy, flow: &mut Option<FlowRun>) -> Outcome {
    let start = Instant::now();
    let cfg = toy_config(Paradigm::Flow);
    let untrained = toy.train(&TrainConfig { epochs: 0, ..cfg.clone() });
    let (_, js0, _) = toy.evaluate(&untrained, FLOW_STEPS);
    let trained = toy.train(&cfg);
    let (generated, js, sec_per_sample) = toy.evaluate(&trained, FLOW_STEPS);
    let took = start.elapsed();
    *flow = Some(FlowRun {
        generated,
        js,
        sec_per_sample,
    });
    verdict(
        js < JS_LIMIT && js < js0 && took < TRAIN_BUDGET,
        format!("js {js:.4} after {} epochs, untrained {js0:.4}, {:.0}s", cfg.epochs, took.as_secs_f64()),
    )
}

fn criterion_6(toy: &Toy, flow: &FlowRun) -> Outcome {
    let start = Instant::now();
    let ck = toy.train(&toy_config(Paradigm::Ddpm));
    let runs: Vec<(f64, f64)> = DDIM_STEPS
        .iter()
        .map(|&s| {
            let (_, js, sec) = toy.evaluate(&ck, s);
            (js, sec)
        })
        .collect();
    let took = start.elapsed();
    let quality = flow.js <= runs[0].0;
    let steps_ok = runs.windows(2).all(|w| w[1].0 <= w[0].0 + DDIM_SLACK);
    let faster = flow.sec_per_sample < runs[DDIM_STEPS.len() - 1].1;
    let ddim = DDIM_STEPS
        .iter()
        .zip(&runs)
        .map(|(s, (js, sec))| format!("@{s} {js:.4} ({:.2}ms)", sec * 1e3))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        quality && steps_ok && faster && took < COMPARE_BUDGET,
        format!(
            "flow@{FLOW_STEPS} js {:.4} ({:.2}ms/sample) vs ddim {ddim}; flow<=ddim@10 {quality}, ddim steps {steps_ok}, faster {faster}, {:.0}s",
            flow.js,
            flow.sec_per_sample * 1e3,
            took.as_secs_f64()
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let schedule = NoiseSchedule::paper(DEFAULT_T).unwrap();
    let full = snr_crossing(&snr_profile(&schedule, SNR_SCALE).unwrap());
    let small = snr_crossing(&snr_profile(&schedule, SNR_SCALE / 10.0).unwrap());
    let took = start.elapsed();
    let earlier = matches!((small, full), (Some(s), Some(f)) if s < f);
    verdict(
        earlier && took < SNR_BUDGET,
        format!("crossing at step {small:?} for scale 0.1 vs {full:?} for scale 1"),
    )
}

fn criterion_8(toy: &Toy, flow: &FlowRun) -> Outcome {
    let rows = per_mode_distances(&toy.held, &flow.generated);
    let mean = |m: TransportMode| rows.iter().find(|r| r.mode == m).and_then(|r| r.generated_mean_km);
    let order = [TransportMode::Train, TransportMode::Car, TransportMode::Bike, TransportMode::Walk];
    let means: Vec<Option<f64>> = order.iter().map(|&m| mean(m)).collect();
    let ok = means.iter().all(Option::is_some) && means.windows(2).all(|w| w[0] > w[1]);
    let detail = order
        .iter()
        .zip(&means)
        .map(|(m, v)| format!("{} {:.2}", m.as_str(), v.unwrap_or(f64::NAN)))
        .collect::<Vec<_>>()
        .join(" > ");
    verdict(ok, format!("generated mean km {detail}"))
}

fn seeded_run() -> String {
    let world = make_world(909, Scale::Urban);
    let dataset = make_dataset(&world, 200, 9).unwrap();
    let cfg = TrainConfig {
        batch_size: 16,
        epochs: 2,
        blocks: 1,
        width: 16,
        control_dim: 8,
        cond_hidden: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let (ck, _) = pipeline::fit(&dataset, &cfg, None, |_| {}).unwrap();
    let specs = pipeline::test_split_specs(&dataset).unwrap();
    let requests = pipeline::requests(&specs, 20, cfg.l).unwrap();
    let generated = generate(&ck.model().unwrap(), &ck.sampler(FLOW_STEPS, 0.5).unwrap(), &world, &requests, 9).unwrap();
    let mut out = ck.to_json().unwrap();
    for t in dataset.trajectories.iter().chain(&generated) {
        out.push_str(&trajectory_to_json(t).unwrap());
    }
    out
}

fn criterion_9() -> Outcome {
    let world = make_world(9, Scale::Metro);
    let data = sample_range(&world, 9, 0, 500).unwrap();
    let mut worst: f64 = 0.0;
    for t in &data {
        let (norm, frame) = normalize_trajectory(t).unwrap();
        for (p, q) in t.points.iter().zip(denormalize(&norm, &frame).unwrap()) {
            let p = p.position();
            worst = worst.max((p[0] - q[0]).abs()).max((p[1] - q[1]).abs());
        }
    }
    let a = seeded_run();
    let b = seeded_run();
    verdict(
        worst < ROUND_TRIP_TOL && a == b,
        format!("round trip max err {worst:.1e} deg, seeded runs identical {} ({} bytes)", a == b, a.len()),
    )
}

fn criterion_10(toy: &Toy, flow: &FlowRun) -> Outcome {
    let inside = flow
        .generated
        .iter()
        .zip(&toy.requests)
        .take(FIDELITY_SAMPLES)
        .filter(|(g, r)| {
            let first = g.points[0].position();
            let last = g.points[g.points.len() - 1].position();
            toy.world.zone_of(first) == r.spec.origin_zone && toy.world.zone_of(last) == r.spec.destination_zone
        })
        .count();
    let share = inside as f64 / FIDELITY_SAMPLES as f64;
    verdict(
        share >= FIDELITY_SHARE,
        format!("{inside}/{FIDELITY_SAMPLES} start and end in their conditioned zones"),
    )
}

fn run(n: usize, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {n}: PASS {detail} [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("criterion {n}: FAIL {detail} [{secs:.1}s]");
            false
        }
    }
}

#[test]
fn acceptance() {
    std::env::set_var(THREADS_ENV, "1");
    let mut passed = vec![
        run(1, criterion_1),
        run(2, criterion_2),
        run(3, criterion_3),
        run(4, criterion_4),
    ];
    let toy = Toy::new();
    let mut flow = None;
    passed.push(run(5, || criterion_5(&toy, &mut flow)));
    let missing = || Err("flow model unavailable".to_string());
    passed.push(run(6, || flow.as_ref().map_or_else(missing, |f| criterion_6(&toy, f))));
    passed.push(run(7, criterion_7));
    passed.push(run(8, || flow.as_ref().map_or_else(missing, |f| criterion_8(&toy, f))));
    passed.push(run(9, criterion_9));
    passed.push(run(10, || flow.as_ref().map_or_else(missing, |f| criterion_10(&toy, f))));
    let failed: Vec<usize> = passed.iter().enumerate().filter(|(_, &ok)| !ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
