//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scawave::autodiff::{Tape, Tensor};
use scawave::data::align::align_channels;
use scawave::data::canonical::{read_samples, write_samples, Provenance};
use scawave::data::era5::{match_era5_all, Era5Grid};
use scawave::data::qc::{quality_control, read_l1_jsonl, write_l1_jsonl, Rejection};
use scawave::data::record::{Flags, Geometry, L1Record, Observables};
use scawave::data::split::{split_dataset, SplitSpec, TimeRange};
use scawave::data::{cap_and_filter, prepare, Example, FourChannelSample, Standardizer, SWH_CAP_M};
use scawave::data::buoy::within_thresholds;
use scawave::gradcheck::{central_difference, GradCheckReport};
use scawave::metrics::{bias, cc, mae, mape, report, rmse};
use scawave::model::checkpoint::Checkpoint;
use scawave::model::ddm::{self, positional_encoding, LayerVars};
use scawave::model::head::huber;
use scawave::model::{self, Ctx, ModelConfig, ModelInput, ModelWeights, NetVars, Strategy, CHANNELS};
use scawave::synth::{synth_raw, synth_samples, SynthSpec};
use scawave::training::{predict, train, OptimizerState, TrainConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn randomize(w: &mut ModelWeights, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in w.iter_mut() {
        for v in p.tensor.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

fn random_input(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelInput {
    let n = CHANNELS * 3 * cfg.ddm_width * cfg.ddm_height;
    let k = cfg.ap_count();
    ModelInput::from_tensors(
        Tensor::new(
            vec![CHANNELS, 3, cfg.ddm_width, cfg.ddm_height],
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap(),
        Tensor::new(vec![CHANNELS, k], (0..CHANNELS * k).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
    )
    .unwrap()
}

/// Adds an offset drawn from ±`scale` to every DDM and AP entry of channel `ch`.
fn perturb_channel(x: &ModelInput, cfg: &ModelConfig, ch: usize, rng: &mut ChaCha8Rng, scale: f64) -> ModelInput {
    let mut ddm = x.ddm.tensor().clone();
    let mut ap = x.ap.tensor().clone();
    let per = 3 * cfg.ddm_width * cfg.ddm_height;
    for v in &mut ddm.data_mut()[ch * per..(ch + 1) * per] {
        *v += rng.random_range(-scale..scale);
    }
    let k = cfg.ap_count();
    for v in &mut ap.data_mut()[ch * k..(ch + 1) * k] {
        *v += rng.random_range(-scale..scale);
    }
    ModelInput::from_tensors(ddm, ap).unwrap()
}

fn loss_value(w: &ModelWeights, inputs: &[&ModelInput], targets: &[[f64; 4]], seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars = NetVars::bind(w, &mut tape).unwrap();
    let mut ctx = Ctx::train(seed);
    let l = model::batch_loss(&mut tape, &mut ctx, &vars, w.config(), inputs, targets, 2.0).unwrap();
    tape.value(l).data()[0]
}

// Every parameter entry against central differences, dropout active with a fixed mask stream.
fn c1_gradcheck() -> Outcome {
    let step = 1e-4;
    let floor = 1e-8;
    let mut lines = Vec::new();
    let mut worst = 0.0f64;
    for strategy in [Strategy::CD, Strategy::CI] {
        let cfg = ModelConfig::toy(strategy);
        let mut w = ModelWeights::init(&cfg).unwrap();
        randomize(&mut w, 17, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let inputs: Vec<ModelInput> = (0..2).map(|_| random_input(&cfg, &mut rng)).collect();
        let refs: Vec<&ModelInput> = inputs.iter().collect();
        // Targets far enough apart that both Huber branches are exercised.
        let targets = [[0.5, 3.0, -2.5, 1.0], [-3.0, 0.2, 2.8, -0.4]];
        let seed = 99;

        w.zero_grad();
        let mut tape = Tape::new();
        let vars = NetVars::bind(&w, &mut tape).unwrap();
        let mut ctx = Ctx::train(seed);
        let l = model::batch_loss(&mut tape, &mut ctx, &vars, &cfg, &refs, &targets, 2.0).unwrap();
        let grads = tape.backward(l).unwrap();
        tape.accumulate_into(&grads, &mut w).unwrap();

        let mut rep = GradCheckReport::default();
        let names: Vec<String> = w.iter().map(|p| p.name.clone()).collect();
        for name in names {
            let analytic = w.get(&name).unwrap().tensor.grad().map(<[f64]>::to_vec);
            let mut x = w.get(&name).unwrap().tensor.data().to_vec();
            let analytic = analytic.unwrap_or_else(|| vec![0.0; x.len()]);
            let mut probe = w.clone();
            let numeric = central_difference(&mut x, step, |xs| {
                probe.get_mut(&name).unwrap().tensor.data_mut().copy_from_slice(xs);
                Ok(loss_value(&probe, &refs, &targets, seed))
            })
            .unwrap();
            for (j, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                rep.record(&name, j, *a, *n, floor);
            }
        }
        worst = worst.max(rep.max_rel_err);
        lines.push(format!(
            "{strategy}: {} entries, max rel err {:.2e} at {:?}",
            rep.checked, rep.max_rel_err, rep.worst
        ));
    }
    check(worst < 1e-4, lines.join("; "))
}

fn c2_ci_isolation() -> Outcome {
    let cfg = ModelConfig::toy(Strategy::CI);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    let mut unchanged_self = 0;
    for trial in 0..100 {
        let mut w = ModelWeights::init(&cfg).unwrap();
        randomize(&mut w, 1000 + trial, 0.8);
        let x = random_input(&cfg, &mut rng);
        let j = trial as usize % CHANNELS;
        let moved = perturb_channel(&x, &cfg, j, &mut rng, 1.0);
        let a = model::predict(&w, &x).unwrap();
        let b = model::predict(&w, &moved).unwrap();
        for i in 0..CHANNELS {
            if i != j && a[i].to_bits() != b[i].to_bits() {
                violations += 1;
            }
        }
        if a[j] == b[j] {
            unchanged_self += 1;
        }
    }
    check(
        violations == 0,
        format!("100 trials, {violations} cross-channel changes, {unchanged_self} trials where the perturbed channel itself was unchanged"),
    )
}

fn c3_cd_coupling() -> Outcome {
    let cfg = ModelConfig::toy(Strategy::CD);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-4;
    let mut coupled = 0;
    let mut weakest = f64::INFINITY;
    for trial in 0..20 {
        let mut w = ModelWeights::init(&cfg).unwrap();
        randomize(&mut w, 2000 + trial, 0.8);
        let x = random_input(&cfg, &mut rng);
        let mut best = 0.0f64;
        for j in 0..CHANNELS {
            let mut ap = x.ap.tensor().clone();
            let k = cfg.ap_count();
            for v in &mut ap.data_mut()[j * k..(j + 1) * k] {
                *v += h;
            }
            let mut ddm = x.ddm.tensor().clone();
            let per = 3 * cfg.ddm_width * cfg.ddm_height;
            for v in &mut ddm.data_mut()[j * per..(j + 1) * per] {
                *v += h;
            }
            let up = ModelInput::from_tensors(ddm, ap).unwrap();
            let a = model::predict(&w, &x).unwrap();
            let b = model::predict(&w, &up).unwrap();
            for i in (0..CHANNELS).filter(|&i| i != j) {
                best = best.max(((b[i] - a[i]) / h).abs());
            }
        }
        weakest = weakest.min(best);
        if best > 1e-8 {
            coupled += 1;
        }
    }
    check(
        coupled == 20,
        format!("{coupled}/20 trials with a cross-channel sensitivity > 1e-8 (smallest per-trial max {weakest:.3e})"),
    )
}

fn matrix(rows: usize, data: &[f64]) -> Vec<Vec<f64>> {
    data.chunks(data.len() / rows).map(<[f64]>::to_vec).collect()
}

fn param(w: &ModelWeights, name: &str) -> Vec<f64> {
    w.get(name).unwrap_or_else(|| panic!("{name}")).tensor.data().to_vec()
}

/// Straight-line encoder layer: diagonal-scale attention per channel head,
/// output projection, residual normalization, feed-forward, residual normalization.
fn layer_oracle(x: &[Vec<f64>], w: &ModelWeights) -> Vec<Vec<f64>> {
    let cfg = w.config();
    let m = x.len();
    let p = |s: &str| param(w, &format!("ddm.layer0.{s}"));
    let (qs, ks, vs, wo) = (p("attn.q_scale"), p("attn.k_scale"), p("attn.v_scale"), p("attn.w_o"));
    let mut heads = vec![vec![0.0; 4]; m];
    for i in 0..4 {
        for a in 0..m {
            let s: Vec<f64> = (0..m).map(|b| (x[a][i] * qs[i]) * (x[b][i] * ks[i])).collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for b in 0..m {
                heads[a][i] += e[b] / z * x[b][i] * vs[i];
            }
        }
    }
    let o: Vec<Vec<f64>> = heads
        .iter()
        .map(|hd| {
            (0..4)
                .map(|j| match cfg.strategy {
                    Strategy::CI => hd[j] * wo[j],
                    Strategy::CD => (0..4).map(|i| hd[i] * wo[i * 4 + j]).sum(),
                })
                .collect()
        })
        .collect();
    let norm = |y: &[Vec<f64>], g: &[f64], bt: &[f64]| -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; 4]; m];
        match cfg.strategy {
            Strategy::CD => {
                for a in 0..m {
                    let mu = y[a].iter().sum::<f64>() / 4.0;
                    let var = y[a].iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 4.0;
                    for j in 0..4 {
                        out[a][j] = g[j] * (y[a][j] - mu) / (var + cfg.ln_eps).sqrt() + bt[j];
                    }
                }
            }
            Strategy::CI => {
                for j in 0..4 {
                    let mu = (0..m).map(|a| y[a][j]).sum::<f64>() / m as f64;
                    let var = (0..m).map(|a| (y[a][j] - mu).powi(2)).sum::<f64>() / m as f64;
                    for a in 0..m {
                        out[a][j] = g[j] * (y[a][j] - mu) / (var + cfg.ln_eps).sqrt() + bt[j];
                    }
                }
            }
        }
        out
    };
    let add = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u + v).collect()).collect()
    };
    let d = add(&o, &norm(&o, &p("norm1.gamma"), &p("norm1.beta")));
    let dense = |x: &[f64], wt: &[f64], b: &[f64]| -> Vec<f64> {
        let out = b.len();
        (0..out)
            .map(|c| b[c] + x.iter().enumerate().map(|(i, xi)| xi * wt[i * out + c]).sum::<f64>())
            .collect()
    };
    let relu = |v: Vec<f64>| v.into_iter().map(|z| z.max(0.0)).collect::<Vec<_>>();
    let f: Vec<Vec<f64>> = d
        .iter()
        .map(|row| match cfg.strategy {
            Strategy::CD => {
                let hdn = relu(dense(row, &p("ffn.l1.w"), &p("ffn.l1.b")));
                dense(&hdn, &p("ffn.l2.w"), &p("ffn.l2.b"))
            }
            Strategy::CI => (0..4)
                .map(|c| {
                    let q = |s: &str| p(&format!("ffn.ch{c}.{s}"));
                    let hdn = relu(dense(&[row[c]], &q("l1.w"), &q("l1.b")));
                    dense(&hdn, &q("l2.w"), &q("l2.b"))[0]
                })
                .collect(),
        })
        .collect();
    add(&d, &norm(&f, &p("norm2.gamma"), &p("norm2.beta")))
}

fn c4_encoder_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for strategy in [Strategy::CD, Strategy::CI] {
        for m in 1..=4usize {
            for seed in 0..5u64 {
                let cfg = ModelConfig::toy(strategy);
                let mut w = ModelWeights::init(&cfg).unwrap();
                randomize(&mut w, 300 + seed * 7 + m as u64, 0.9);
                let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
                let xs: Vec<f64> = (0..m * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
                let mut tape = Tape::new();
                let b = w.bind(&mut tape).unwrap();
                let vars = LayerVars::bind(&b, 0, strategy).unwrap();
                let x = tape.constant(Tensor::new(vec![m, 4], xs.clone()).unwrap()).unwrap();
                let y = ddm::encoder_layer(&mut tape, &mut Ctx::eval(), x, &vars, &cfg).unwrap();
                let got = tape.value(y).data().to_vec();
                let want: Vec<f64> = layer_oracle(&matrix(m, &xs), &w).into_iter().flatten().collect();
                for (g, e) in got.iter().zip(&want) {
                    worst = worst.max((g - e).abs());
                }
                cases += 1;
            }
        }
    }
    check(worst <= 1e-10, format!("{cases} cases (M = 1..4, CI and CD), max abs diff {worst:.2e}"))
}

fn c5_huber() -> Outcome {
    let want = [(0.0, 0.0), (1.0, 0.5), (-1.0, 0.5), (2.0, 2.0), (-2.0, 2.0), (3.0, 4.0), (-3.0, 4.0)];
    let mut worst_val = 0.0f64;
    for (e, v) in want {
        worst_val = worst_val.max((huber(e, 0.0, 2.0).unwrap() - v).abs());
    }
    let slope = |e: f64| {
        let mut tape = Tape::new();
        let p = scawave::autodiff::Parameter::new("y", Tensor::new(vec![1], vec![e]).unwrap());
        let y = tape.param(&p).unwrap();
        let h = tape.huber(y, &[0.0], 2.0).unwrap();
        let s = tape.sum(h).unwrap();
        let g = tape.backward(s).unwrap();
        g.get(y).unwrap()[0]
    };
    let mut jump = 0.0f64;
    for sign in [1.0, -1.0] {
        let eps = 1e-12;
        jump = jump.max((slope(sign * (2.0 - eps)) - slope(sign * (2.0 + eps))).abs());
        jump = jump.max((slope(sign * 2.0) - sign * 2.0).abs());
    }
    check(
        worst_val == 0.0 && jump <= 1e-9,
        format!("value error {worst_val:.1e}, derivative jump at |e| = 2 {jump:.1e}"),
    )
}

fn c6_positional() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = 2 * rng.random_range(1..16usize);
        let seq = rng.random_range(1..64usize);
        let pos = rng.random_range(0..seq);
        let d = rng.random_range(0..dim);
        let pe = positional_encoding(seq, dim).unwrap();
        let angle = pos as f64 / 10000f64.powf((2 * (d / 2)) as f64 / dim as f64);
        let want = if d % 2 == 0 { angle.sin() } else { angle.cos() };
        worst = worst.max((pe.at(&[pos, d]) - want).abs());
    }
    let pe = positional_encoding(4, 8).unwrap();
    let row0 = (0..8).all(|j| pe.at(&[0, j]) == if j % 2 == 0 { 0.0 } else { 1.0 });
    check(
        worst <= 1e-12 && row0,
        format!("100 pairs, max abs diff {worst:.1e}, first row exact: {row0}"),
    )
}

const W: usize = 4;
const H: usize = 5;

fn clean(timestamp: i64, channel: u8) -> L1Record {
    L1Record {
        timestamp,
        channel,
        sp_lat: 10.3,
        sp_lon: -19.7,
        ddms: vec![1.0; 3 * W * H],
        aps: Observables {
            ddm_nbrcs: 20.0,
            ddm_les: 8.0,
            ddm_snr: 5.0,
            gps_eirp: 900.0,
            sp_rx_gain: 10.0,
            sp_inc_angle: 30.0,
        },
        geometry: Geometry {
            range_tx_sp: 2.0e7,
            range_sp_rx: 6.0e5,
        },
        flags: Flags {
            quality_flags: 0,
            tracker_attitude_status: 0,
            roll_deg: 0.0,
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            distance_to_land_km: 100.0,
            solar_contamination: false,
        },
    }
}

fn c7_pipeline() -> Outcome {
    let mut problems = Vec::new();
    let mut cases: Vec<(Rejection, L1Record)> = Vec::new();
    let mut add = |rule, f: &dyn Fn(&mut L1Record)| {
        let mut r = clean(cases.len() as i64 + 1, 1);
        f(&mut r);
        cases.push((rule, r));
    };
    add(Rejection::Malformed, &|r| {
        r.ddms.pop();
    });
    add(Rejection::NonFinite, &|r| r.aps.ddm_snr = f64::NAN);
    add(Rejection::FillValue, &|r| r.aps.gps_eirp = -9999.0);
    add(Rejection::NegativeObservable, &|r| r.aps.ddm_les = -0.1);
    add(Rejection::LowRcg, &|r| r.aps.sp_rx_gain = 1e-6);
    add(Rejection::SolarContamination, &|r| r.flags.solar_contamination = true);
    add(Rejection::AttitudeStatus, &|r| r.flags.tracker_attitude_status = 3);
    add(Rejection::AttitudeAngles, &|r| r.flags.roll_deg = 30.5);
    add(Rejection::NearLand, &|r| r.flags.distance_to_land_km = 24.0);
    add(Rejection::QualityFlags, &|r| r.flags.quality_flags = 1 << 3);
    let n = cases.len();
    let (kept, mut tally) = quality_control(cases.iter().map(|(_, r)| r.clone()).collect(), 0, W, H);
    if !kept.is_empty() || tally.input != n || tally.rejected() != n {
        problems.push(format!("kept {} of {n}", kept.len()));
    }
    for (rule, _) in &cases {
        if *tally.slot(*rule) != 1 {
            problems.push(format!("{rule:?} tally {}", tally.slot(*rule)));
        }
    }

    let mut edge = clean(100, 1);
    edge.flags.roll_deg = 30.0;
    edge.flags.distance_to_land_km = 25.0;
    let (kept, _) = quality_control(vec![edge], 0, W, H);
    if kept.len() != 1 {
        problems.push("roll = 30 or land distance = 25 km rejected".into());
    }
    if !within_thresholds(25.0, 1800) || within_thresholds(25.0, 1801) {
        problems.push("buoy thresholds not inclusive at 25 km / 30 min".into());
    }

    let mut recs: Vec<L1Record> = (1..=4).map(|c| clean(500, c)).collect();
    recs.extend([1u8, 2, 3].map(|c| clean(600, c)));
    let (groups, at) = align_channels(recs);
    if groups.len() != 1 || groups[0].timestamp != 500 || at.incomplete != 1 {
        problems.push(format!("alignment kept {:?}", groups.iter().map(|g| g.timestamp).collect::<Vec<_>>()));
    }

    let mut samples = synth_samples(&SynthSpec {
        n_samples: 3,
        ddm_width: W,
        ddm_height: H,
        ..SynthSpec::default()
    })
    .unwrap();
    for c in &mut samples[0].channels {
        c.swh_ref = SWH_CAP_M;
    }
    samples[1].channels[2].swh_ref = SWH_CAP_M + 1e-9;
    let (kept, dropped) = cap_and_filter(samples);
    if kept.len() != 2 || dropped != 1 || kept[0].sample_id != 0 {
        problems.push(format!("cap kept {} dropped {dropped}", kept.len()));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{n} rules, one rejection each; boundaries kept; incomplete timestamp dropped; SWH = 8.0 kept")
        } else {
            problems.join("; ")
        },
    )
}

fn c8_interpolation() -> Outcome {
    let t0 = 1_600_000_000 - 1_600_000_000 % 3600;
    let (a, b, c) = (0.37, -0.11, 0.23);
    let times: Vec<i64> = (0..8).map(|h| t0 + 3600 * h).collect();
    let lats: Vec<f64> = (0..13).map(|i| 5.0 + 0.5 * i as f64).collect();
    let lons: Vec<f64> = (0..15).map(|i| -40.0 + 0.5 * i as f64).collect();
    let f = |t: i64, la: f64, lo: f64| a * la + b * lo + c * ((t - t0) as f64 / 3600.0) + 10.0;
    let mut swh = Vec::new();
    for &t in &times {
        for &la in &lats {
            for &lo in &lons {
                swh.push(f(t, la, lo));
            }
        }
    }
    let grid = Era5Grid {
        times,
        lats,
        lons,
        swh,
        mask: None,
        wind: None,
    };
    grid.validate().unwrap();
    // Queries go through full sample matching, one aligned group per point.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut records = Vec::new();
    let mut want = Vec::new();
    for q in 0..250 {
        let t = t0 + 60 * q as i64 + rng.random_range(0..59);
        for ch in 1..=4u8 {
            let mut r = clean(t, ch);
            r.sp_lat = rng.random_range(5.0..11.0);
            r.sp_lon = rng.random_range(-40.0..-33.0);
            want.push(f(t, r.sp_lat, r.sp_lon));
            records.push(r);
        }
    }
    let (groups, _) = align_channels(records);
    let (samples, tally) = match_era5_all(&groups, &grid);
    let got: Vec<f64> = samples.iter().flat_map(|s| s.swh_refs()).collect();
    let worst = got.iter().zip(&want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    check(
        got.len() == 1000 && worst <= 1e-10,
        format!("{} points matched ({tally:?}), max abs diff {worst:.1e}", got.len()),
    )
}

fn c9_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut chain = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..500);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..8.0)).collect();
        let p: Vec<f64> = r.iter().map(|v| v + rng.random_range(-1.5..1.5)).collect();
        let nf = n as f64;
        let mut se = 0.0;
        let mut ae = 0.0;
        let mut be = 0.0;
        let mut pe = 0.0;
        for i in 0..n {
            let e = p[i] - r[i];
            se += e * e;
            ae += e.abs();
            be += e;
            pe += (e / r[i]).abs();
        }
        let (mp, mr) = (p.iter().sum::<f64>() / nf, r.iter().sum::<f64>() / nf);
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for i in 0..n {
            sxy += (p[i] - mp) * (r[i] - mr);
            sxx += (p[i] - mp) * (p[i] - mp);
            syy += (r[i] - mr) * (r[i] - mr);
        }
        let naive = [(se / nf).sqrt(), ae / nf, be / nf, 100.0 * pe / nf, sxy / (sxx * syy).sqrt()];
        let ours = [
            rmse(&p, &r).unwrap(),
            mae(&p, &r).unwrap(),
            bias(&p, &r).unwrap(),
            mape(&p, &r).unwrap(),
            cc(&p, &r).unwrap().unwrap(),
        ];
        for (o, e) in ours.iter().zip(&naive) {
            worst = worst.max((o - e).abs() / e.abs().max(1.0));
        }
        if ours[0] >= ours[1] && ours[1] >= ours[2].abs() {
            chain += 1;
        }
    }
    check(
        worst <= 1e-12 && chain == 100,
        format!("100 pairs, max scaled diff {worst:.1e}, rmse ≥ mae ≥ |bias| on {chain}/100"),
    )
}

fn synth_examples(spec: &SynthSpec, cfg: &ModelConfig) -> (Vec<FourChannelSample>, Vec<Example>) {
    let s = synth_samples(spec).unwrap();
    let std = Standardizer::fit(&s).unwrap();
    let ex = prepare(&s, &std, cfg).unwrap();
    (s, ex)
}

fn toy_spec(n: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_samples: n,
        ddm_width: 6,
        ddm_height: 6,
        seed,
        noise_sd: 0.05,
        channel_corr: 0.9,
        planted_signal: true,
        ..SynthSpec::default()
    }
}

fn c10_overfit() -> Outcome {
    let cfg = ModelConfig::toy(Strategy::CD);
    let (_, ex) = synth_examples(&toy_spec(64, 10), &cfg);
    let mut w = ModelWeights::init(&cfg).unwrap();
    let tc = TrainConfig {
        lr: 3e-3,
        weight_decay: 1e-5,
        ..TrainConfig::default()
    };
    let hp = tc.adam();
    let mut opt = OptimizerState::new();
    let mut ctx = Ctx::train(10);
    let inputs: Vec<&ModelInput> = ex.iter().map(|e| &e.input).collect();
    let targets: Vec<[f64; 4]> = ex.iter().map(|e| e.target).collect();
    let mut reached = None;
    let mut last = f64::NAN;
    for step in 1..=2000 {
        w.zero_grad();
        let mut tape = Tape::new();
        let vars = NetVars::bind(&w, &mut tape).unwrap();
        let l = model::batch_loss(&mut tape, &mut ctx, &vars, &cfg, &inputs, &targets, 2.0).unwrap();
        last = tape.value(l).data()[0];
        if last < 0.01 {
            reached = Some(step);
            break;
        }
        let g = tape.backward(l).unwrap();
        tape.accumulate_into(&g, &mut w).unwrap();
        opt.adamw_step(w.iter_mut(), &hp).unwrap();
    }
    match reached {
        Some(s) => Ok(format!("training batch loss {last:.5} < 0.01 before optimizer step {s} (full batch of 64, lr 3e-3)")),
        None => Err(format!("training batch loss {last:.5} after 2000 steps")),
    }
}

fn time_split(spec: &SynthSpec) -> SplitSpec {
    // Samples spread evenly over three years from the synthetic start date.
    let r = |a: &str, b: &str| TimeRange::parse(a, b).unwrap();
    SplitSpec {
        train: r("2019-08-01", "2021-02-01"),
        val: r("2021-02-01", "2022-08-01"),
        test: r("2022-08-01", "2022-08-02"),
        seed: spec.seed,
        ..SplitSpec::default()
    }
}

fn c11_strategy_order() -> Outcome {
    let mut lines = Vec::new();
    let mut held = 0;
    for seed in 0..3u64 {
        let spec = SynthSpec {
            channel_corr: 0.9,
            ..toy_spec(240, 50 + seed)
        };
        let mut rmses = Vec::new();
        for strategy in [Strategy::CD, Strategy::CI] {
            let cfg = ModelConfig {
                seed,
                ..ModelConfig::toy(strategy)
            };
            let s = synth_samples(&spec).unwrap();
            let splits = split_dataset(s, &time_split(&spec)).unwrap();
            let std = Standardizer::fit(&splits.train).unwrap();
            let tr = prepare(&splits.train, &std, &cfg).unwrap();
            let va = prepare(&splits.val, &std, &cfg).unwrap();
            let tc = TrainConfig {
                batch_size: 16,
                micro_batch: 16,
                max_epochs: 40,
                patience: 10,
                lr: 2e-3,
                seed,
                ..TrainConfig::default()
            };
            let out = train(ModelWeights::init(&cfg).unwrap(), &tr, &va, &tc, "acceptance").unwrap();
            rmses.push(out.meta.val_rmse_avg);
        }
        let ok = rmses[0] <= rmses[1];
        held += ok as usize;
        lines.push(format!(
            "seed {seed}: CD {:.4} CI {:.4}{}",
            rmses[0],
            rmses[1],
            if ok { "" } else { " [ORDERING FAILED]" }
        ));
    }
    check(held == 3, format!("validation average RMSE, {held}/3 seeds with CD ≤ CI; {}", lines.join("; ")))
}

/// Raw records → QC → alignment → reanalysis matching → canonical file →
/// training → checkpoint → test predictions → metrics report.
fn full_run(dir: &Path) -> [Vec<u8>; 4] {
    let spec = SynthSpec {
        n_samples: 150,
        ddm_width: 6,
        ddm_height: 6,
        seed: 12,
        ..SynthSpec::default()
    };
    let raw = synth_raw(&spec).unwrap();
    let l1 = dir.join("l1.jsonl");
    write_l1_jsonl(&l1, &raw.records).unwrap();
    let (records, bad) = read_l1_jsonl(&l1).unwrap();
    let (kept, qc) = quality_control(records, bad, 6, 6);
    let (groups, align) = align_channels(kept);
    let (samples, era5) = match_era5_all(&groups, &raw.grid);
    let (samples, capped) = cap_and_filter(samples);
    let canon = dir.join("samples.jsonl");
    let prov = Provenance {
        qc: Some(qc),
        align: Some(align),
        era5: Some(era5),
        capped_out: Some(capped),
        seed: Some(spec.seed),
        ..Provenance::default()
    };
    write_samples(&canon, &samples, 6, 6, prov).unwrap();
    let (samples, _) = read_samples(&canon).unwrap();
    let r = |a: &str, b: &str| TimeRange::parse(a, b).unwrap();
    let split = SplitSpec {
        train: r("2019-08-01T00:00:00Z", "2019-08-01T01:40:00Z"),
        val: r("2019-08-01T01:40:00Z", "2019-08-01T02:05:00Z"),
        test: r("2019-08-01T02:05:00Z", "2019-08-01T03:00:00Z"),
        seed: 12,
        ..SplitSpec::default()
    };
    let splits = split_dataset(samples, &split).unwrap();
    let cfg = ModelConfig::toy(Strategy::CD);
    let std = Standardizer::fit(&splits.train).unwrap();
    let tr = prepare(&splits.train, &std, &cfg).unwrap();
    let va = prepare(&splits.val, &std, &cfg).unwrap();
    let te = prepare(&splits.test, &std, &cfg).unwrap();
    let tc = TrainConfig {
        batch_size: 16,
        micro_batch: 8,
        max_epochs: 3,
        patience: 3,
        lr: 1e-3,
        seed: 12,
        ..TrainConfig::default()
    };
    let out = train(ModelWeights::init(&cfg).unwrap(), &tr, &va, &tc, "repro").unwrap();
    let ck_path = dir.join("checkpoint.json");
    Checkpoint {
        weights: out.best,
        standardizer: Some(std),
        meta: Some(out.meta),
    }
    .save(&ck_path)
    .unwrap();
    let ck = Checkpoint::load(&ck_path).unwrap();
    let recs = predict(&ck.weights, &te).unwrap();
    let rep_path = dir.join("metrics.json");
    report(&recs, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], "repro")
        .unwrap()
        .write_json(&rep_path)
        .unwrap();
    [
        std::fs::read(&canon).unwrap(),
        std::fs::read(dir.join("samples.jsonl.manifest.json")).unwrap(),
        std::fs::read(&ck_path).unwrap(),
        std::fs::read(&rep_path).unwrap(),
    ]
}

fn c12_reproducibility() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let x = full_run(a.path());
    let y = full_run(b.path());
    let names = ["canonical file", "manifest", "checkpoint", "metrics report"];
    let differing: Vec<&str> = names.iter().zip(x.iter().zip(&y)).filter(|(_, (p, q))| p != q).map(|(n, _)| *n).collect();
    let sizes: Vec<String> = names.iter().zip(&x).map(|(n, v)| format!("{n} {} B", v.len())).collect();
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("byte-identical across two runs ({})", sizes.join(", "))
        } else {
            format!("differs: {}", differing.join(", "))
        },
    )
}

fn c13_param_counts() -> Outcome {
    let count = |s| ModelWeights::init(&ModelConfig { strategy: s, ..ModelConfig::default() }).unwrap().count_params();
    let ci = count(Strategy::CI);
    let cd = count(Strategy::CD);
    let toy_ci = ModelWeights::init(&ModelConfig::toy(Strategy::CI)).unwrap().count_params();
    let toy_cd = ModelWeights::init(&ModelConfig::toy(Strategy::CD)).unwrap().count_params();
    Ok(format!(
        "informational: full-size CI {:.3}M, CD {:.3}M (reference scale: CI 0.915M; CD 1.966M, also quoted as 0.986M); toy CI {toy_ci}, CD {toy_cd}",
        ci as f64 / 1e6,
        cd as f64 / 1e6
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("gradient correctness", c1_gradcheck),
        ("CI isolation", c2_ci_isolation),
        ("CD coupling", c3_cd_coupling),
        ("encoder oracle", c4_encoder_oracle),
        ("Huber exactness", c5_huber),
        ("positional encoding", c6_positional),
        ("pipeline conformance", c7_pipeline),
        ("interpolation oracle", c8_interpolation),
        ("metrics oracle", c9_metrics),
        ("overfit capability", c10_overfit),
        ("strategy ordering", c11_strategy_order),
        ("reproducibility", c12_reproducibility),
        ("parameter counts", c13_param_counts),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{:02}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str()) || id == *p) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id} {name}: PASS ({secs:.1}s) {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({secs:.1}s) {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
