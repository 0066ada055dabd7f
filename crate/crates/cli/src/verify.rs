//! Seeded oracle comparisons behind `repurpose verify`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use repurpose_core::assignment::{assign_neurons, brute_force_assign, column_cost, RepurposeConfig};
use repurpose_core::partition::{balanced_counts, owners};
use repurpose_core::repurpose::{calibrate_eta2, error_certificate, repurpose_model};
use repurpose_core::synth::{random_batch, random_model};
use repurpose_core::tensor::max_relative_error;
use repurpose_core::{distributed_forward, shard_model, Activation, ExecMode, PartitionSpec};

use crate::{Ctx, Status, VerifyArgs, VerifyMode};

/// A failing instance, printed verbatim.
type Mismatch = String;

pub(crate) fn run(ctx: &Ctx, args: &VerifyArgs) -> anyhow::Result<Status> {
    let mut rng = ctx.rng();
    let name = format!("{:?}", args.mode).to_lowercase();
    for trial in 0..args.trials {
        let outcome = match args.mode {
            VerifyMode::Lemma1 => column_costs(&mut rng, args.inject_fault)?,
            VerifyMode::Assignment => assignment(&mut rng)?,
            VerifyMode::Bound => bound(&mut rng)?,
            VerifyMode::Exec => exec(&mut rng)?,
        };
        if let Err(instance) = outcome {
            eprintln!("{name}: trial {trial} failed: {instance}");
            return Ok(Status::Mismatch);
        }
    }
    ctx.say(format!("{name}: {} trials passed", args.trials));
    Ok(Status::Ok)
}

fn support_min(w: &[f64], owner: &[usize], worker: usize, cfg: &RepurposeConfig) -> f64 {
    (0u32..1 << w.len())
        .map(|mask| {
            w.iter()
                .enumerate()
                .map(|(i, v)| if mask >> i & 1 == 1 { cfg.threshold(owner[i] != worker) } else { v * v })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

fn column_costs(rng: &mut ChaCha8Rng, fault: bool) -> anyhow::Result<Result<(), Mismatch>> {
    const GRID: [f64; 4] = [0.0, 0.01, 0.1, 1.0];
    let len = rng.gen_range(1..=6);
    let workers = rng.gen_range(1..=3);
    let mut in_counts = vec![0; workers];
    for _ in 0..len {
        in_counts[rng.gen_range(0..workers)] += 1;
    }
    let owner = owners(&in_counts);
    let w: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect();
    for eta1 in GRID {
        for eta2 in GRID {
            let cfg = RepurposeConfig::new(eta1, eta2)?;
            for j in 0..workers {
                let got = if fault {
                    // Mutation canary: every weight is charged the other side's threshold.
                    w.iter()
                        .enumerate()
                        .map(|(i, v)| (v * v).min(cfg.threshold(owner[i] == j)))
                        .sum::<f64>()
                } else {
                    column_cost(&w, &in_counts, j, &cfg)?.1
                };
                let want = support_min(&w, &owner, j, &cfg);
                if (got - want).abs() > 1e-12 {
                    return Ok(Err(format!(
                        "w = {w:?}, in_counts = {in_counts:?}, worker {j}, eta = ({eta1}, {eta2}): cost {got} vs oracle {want}"
                    )));
                }
            }
        }
    }
    Ok(Ok(()))
}

fn assignment(rng: &mut ChaCha8Rng) -> anyhow::Result<Result<(), Mismatch>> {
    let n = rng.gen_range(1..=8);
    let p = rng.gen_range(1..=3usize.min(n));
    let rows = rng.gen_range(1..=6);
    let w = random_batch(rng, rows, n, 1.0);
    let (ic, oc) = (balanced_counts(rows, p), balanced_counts(n, p));
    let cfg = RepurposeConfig::new(rng.gen_range(0.0..0.1), rng.gen_range(0.0..0.8))?;
    let fast = assign_neurons(&w, &ic, &oc, &cfg)?;
    let slow = brute_force_assign(&w, &ic, &oc, &cfg)?;
    if (fast.total_cost - slow.total_cost).abs() > 1e-9 {
        return Ok(Err(format!(
            "W = {:?}, counts {ic:?} -> {oc:?}, {cfg:?}: munkres {} vs brute force {}",
            (0..w.rows()).map(|r| w.row(r)).collect::<Vec<_>>(),
            fast.total_cost,
            slow.total_cost
        )));
    }
    Ok(Ok(()))
}

fn bound(rng: &mut ChaCha8Rng) -> anyhow::Result<Result<(), Mismatch>> {
    let p = rng.gen_range(2..=3);
    let widths: Vec<usize> = (0..5).map(|_| rng.gen_range(p..=12)).collect();
    let act = Activation::ALL[rng.gen_range(0..Activation::ALL.len())];
    let model = random_model(rng, &widths, act, 0.6);
    let spec = PartitionSpec::balanced(p, &widths)?;
    let epsilon = rng.gen_range(0.05..0.5);
    let cfg = calibrate_eta2(&model, &spec, 0.0, epsilon)?;
    let rep = repurpose_model(&model, &spec, &cfg)?;
    let probe = random_batch(rng, widths[0], 16, 1.0);
    let cert = error_certificate(&model, &rep, &probe)?;
    if !(cert.holds && cert.recursion_holds) {
        return Ok(Err(format!(
            "widths {widths:?}, {act:?}, epsilon {epsilon}: bound {} vs errors {:?}, recursion {}",
            cert.bound, cert.sample_errors, cert.recursion_holds
        )));
    }
    Ok(Ok(()))
}

fn exec(rng: &mut ChaCha8Rng) -> anyhow::Result<Result<(), Mismatch>> {
    let p = rng.gen_range(1..=4);
    let widths: Vec<usize> = (0..4).map(|_| rng.gen_range(p..=24)).collect();
    let model = random_model(rng, &widths, Activation::Relu, 1.0);
    let spec = PartitionSpec::balanced(p, &widths)?;
    let rep = repurpose_model(&model, &spec, &RepurposeConfig::new(0.0, rng.gen_range(0.0..0.5))?)?;
    let sharded = shard_model(&rep.model, &spec)?;
    for (l, d) in rep.model.dense_layers()?.iter().enumerate() {
        if sharded.layers[l].reassemble() != d.weight {
            return Ok(Err(format!("widths {widths:?}, P = {p}: layer {l} shards do not reassemble")));
        }
    }
    let x = random_batch(rng, widths[0], 4, 1.0);
    let dist = distributed_forward(&sharded, &x, ExecMode::Parallel)?;
    let err = max_relative_error(&dist.concat()?, &rep.model.output(&x)?);
    if err > 1e-9 {
        return Ok(Err(format!("widths {widths:?}, P = {p}: relative error {err:e}")));
    }
    Ok(Ok(()))
}
