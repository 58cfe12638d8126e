//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Instant;

use kittensim::grid::*;
use kittensim::kernels::*;
use kittensim::layouts::*;
use kittensim::lcsf::*;
use kittensim::machine::{estimate_cost, preset_h100, CostTerm, WorkProfile};
use kittensim::tiles::{Dtype, GlobalTensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn read(rel: &str) -> Result<String, String> {
    std::fs::read_to_string(repo_file(rel)).map_err(|e| format!("{rel}: {e}"))
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bank_conflict_table() -> Outcome {
    let want = [
        (SwizzleMode::NaiveRowMajor, 8),
        (SwizzleMode::Sw32, 4),
        (SwizzleMode::Sw64, 2),
        (SwizzleMode::Sw128, 1),
    ];
    let mut got = Vec::new();
    for (mode, way) in want {
        let layout = SharedLayout::new(32, 64, 2, mode).map_err(|e| e.to_string())?;
        let r = analyze_conflicts(&layout, &AccessPattern::TensorCoreSegments).map_err(|e| e.to_string())?;
        ensure(r.max_way == way, || format!("{mode:?}: {}-way, expected {way}-way", r.max_way))?;
        got.push(r.max_way.to_string());
    }
    Ok(format!("naive/sw32/sw64/sw128 = {}-way (exact)", got.join("/")))
}

fn layout_permutation_and_alignment() -> Outcome {
    let sizes = [16, 32, 64, 128];
    let (mut checked, mut aligned, mut skipped) = (0, 0, 0);
    for &rows in &sizes {
        for &cols in &sizes {
            for eb in [2, 4] {
                for mode in [SwizzleMode::Sw32, SwizzleMode::Sw64, SwizzleMode::Sw128, SwizzleMode::RowXor] {
                    let Ok(layout) = SharedLayout::new(rows, cols, eb, mode) else {
                        skipped += 1;
                        continue;
                    };
                    ensure(check_bijective(&layout), || {
                        format!("{rows}x{cols}x{eb}B {mode:?} is not a permutation")
                    })?;
                    checked += 1;
                    // RowXor moves 4-byte words and makes no alignment promise.
                    if !mode.is_address_swizzle() {
                        continue;
                    }
                    for r in 0..rows {
                        for c in (0..cols).filter(|c| (c * eb) % 16 == 0) {
                            let off = layout.element_offset(r, c).map_err(|e| e.to_string())?;
                            ensure(off % 16 == 0, || {
                                format!("{rows}x{cols}x{eb}B {mode:?}: ({r},{c}) -> {off} misaligned")
                            })?;
                        }
                    }
                    aligned += 1;
                }
            }
        }
    }
    ensure(checked > 0, || "no layouts checked".into())?;
    Ok(format!(
        "{checked} layouts bijective, {aligned} address swizzles keep 16B alignment ({skipped} width-invalid combinations rejected)"
    ))
}

fn swizzle_selection() -> Outcome {
    for (cols, mode) in [
        (16, SwizzleMode::Sw32),
        (32, SwizzleMode::Sw64),
        (64, SwizzleMode::Sw128),
        (128, SwizzleMode::Sw128),
    ] {
        let got = select_swizzle(64, cols, 2).map_err(|e| e.to_string())?;
        ensure(got == mode, || format!("width {} B chose {got:?}, expected {mode:?}", cols * 2))?;
    }
    ensure(select_swizzle(64, 24, 2).is_err(), || "width 48 B accepted".into())?;
    Ok("32/64/128 B -> sw32/sw64/sw128, 48 B rejected (exact)".into())
}

fn kernel_oracle_equivalence() -> Outcome {
    let opts = RunOptions::default();
    let (mut gemm, mut att, mut rot) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..20 {
        let g = run_gemm(GemmConfig::fitted(128, 128, 128).with_dtype(Dtype::F32), seed, &opts).map_err(|e| e.to_string())?;
        gemm = gemm.max(g.manifest.errors.max_abs_error);
        for d in [64, 128] {
            let a = run_attention(AttentionConfig::new(1, 1, 384, d).with_dtype(Dtype::F32), seed, &opts).map_err(|e| e.to_string())?;
            att = att.max(a.manifest.errors.max_abs_error);
        }
        let r = run_rotary(
            RotaryConfig::new(1, 1, 64, 128).with_dtype(Dtype::F32),
            seed,
            RotaryTables::Random,
            &opts,
        )
        .map_err(|e| e.to_string())?;
        rot = rot.max(r.manifest.errors.max_abs_error);
    }
    ensure(gemm <= 1e-4 && att <= 1e-5 && rot <= 1e-5, || {
        format!("max abs errors gemm {gemm:.2e} (<= 1e-4), attention {att:.2e} (<= 1e-5), rotary {rot:.2e} (<= 1e-5)")
    })?;
    Ok(format!(
        "20 seeds: gemm {gemm:.2e} <= 1e-4, attention {att:.2e} <= 1e-5, rotary {rot:.2e} <= 1e-5"
    ))
}

fn online_softmax_chunking() -> Outcome {
    let mut worst = 0.0f32;
    for seed in [17, 18, 19] {
        let base = AttentionConfig::new(1, 1, 384, 64).with_dtype(Dtype::F32);
        let [q, k, v] = attention_inputs(&base, seed);
        // One, two and three KV chunks.
        let outs = [384, 192, 128].map(|rows| {
            run_attention_with(
                base.with_kv_rows(rows),
                q.clone(),
                k.clone(),
                v.clone(),
                seed,
                &RunOptions::default(),
            )
        });
        let outs: Vec<GlobalTensor> = outs
            .into_iter()
            .map(|r| r.map(|r| r.output).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        for o in &outs[1..] {
            let diff = o.data().iter().zip(outs[0].data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            worst = worst.max(diff);
        }
    }
    ensure(worst <= 1e-5, || format!("chunk counts 1/2/3 differ by {worst:.2e} (> 1e-5)"))?;
    Ok(format!("KV chunks 1/2/3 (N=384, D=64, 3 seeds): max diff {worst:.2e} <= 1e-5"))
}

fn check_interleavings<K: KernelSpec>(
    name: &str,
    kernel: &K,
    globals: &GlobalSet,
    cfg: &PipelineConfig,
    output: &str,
) -> Result<usize, String> {
    let reference =
        execute_functional(kernel, globals.clone(), cfg, Backend::Interleaved(Scheduler::InOrder)).map_err(|e| e.to_string())?;
    let want = reference.globals.get(output).map_err(|e| e.to_string())?.clone();
    let mut events = 0;
    for seed in 0..50 {
        let run = execute_functional(kernel, globals.clone(), cfg, Backend::Interleaved(Scheduler::Random { seed }))
            .map_err(|e| e.to_string())?;
        let got = run.globals.get(output).map_err(|e| e.to_string())?;
        ensure(got.data() == want.data(), || format!("{name}: seed {seed} output differs"))?;
        for trace in &run.traces {
            let report = validate_trace(trace);
            ensure(report.is_safe(), || format!("{name}: seed {seed}: {:?}", report.violations))?;
            events += report.events;
        }
    }
    Ok(events)
}

fn lcsf_safety_and_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut events = 0;

    let gemm = GemmKernel::new(GemmConfig::fitted(128, 256, 256).with_dtype(Dtype::F32)).map_err(|e| e.to_string())?;
    let a = random_tensor([1, 1, 128, 256], Dtype::F32, &mut rng);
    let b = random_tensor([1, 1, 256, 256], Dtype::F32, &mut rng);
    events += check_interleavings("gemm", &gemm, &gemm.globals(a, b), &PipelineConfig::lcsf(2, 1, 2), "C")?;

    let cfg = AttentionConfig::new(1, 2, 384, 64).with_dtype(Dtype::F32);
    let att = AttentionKernel::new(cfg).map_err(|e| e.to_string())?;
    let [q, k, v] = attention_inputs(&cfg, 6);
    events += check_interleavings("attention", &att, &att.globals(q, k, v), &att.pipeline(3, 227 * 1024), "O")?;

    let cfg = RotaryConfig::new(2, 2, 64, 128).with_dtype(Dtype::F32);
    let rot = RotaryKernel::new(cfg).map_err(|e| e.to_string())?;
    let x = random_tensor(cfg.dims(), Dtype::F32, &mut rng);
    let [cos, sin] = rotary_tables(&cfg, RotaryTables::Random, &mut rng);
    let pipe = PipelineConfig::lcsf(cfg.consumers, 1, 2).with_output_stages(2);
    events += check_interleavings("rotary", &rot, &rot.globals(x, cos, sin), &pipe, "OUT")?;

    Ok(format!(
        "3 kernels x 50 seeds: outputs identical, 0 violations over {events} trace events"
    ))
}

fn pipeline_depth_trend() -> Outcome {
    let profile = LatencyProfile::from_path(repo_file("profiles/gemm.json")).map_err(|e| e.to_string())?;
    let kernel = GemmKernel::new(GemmConfig::new(4096, 4096, 4096)).map_err(|e| e.to_string())?;
    let globals = kernel.globals(
        GlobalTensor::zeros([1, 1, 4096, 4096], Dtype::Bf16),
        GlobalTensor::zeros([1, 1, 4096, 4096], Dtype::Bf16),
    );
    let mut thr = Vec::new();
    for stages in 1..=4 {
        let cfg = PipelineConfig::lcsf(2, 1, stages);
        let t = simulate_kernel_timed(&kernel, &globals, &cfg, &profile, &SimOptions::default()).map_err(|e| e.to_string())?;
        thr.push(t.throughput);
    }
    let ratio = thr[3] / thr[0];
    ensure(thr.windows(2).all(|w| w[1] > w[0]), || {
        format!("throughput not strictly increasing: {thr:?}")
    })?;
    ensure(ratio >= 2.0, || format!("stage4/stage1 = {ratio:.3} < 2"))?;
    Ok(format!("stages 1..4 strictly increasing, stage4/stage1 = {ratio:.2} >= 2"))
}

fn occupancy_curve() -> Outcome {
    let scenario: OccupancyScenario = serde_json::from_str(&read("scenarios/occupancy.json")?).map_err(|e| e.to_string())?;
    let lcsf = occupancy_sweep(&scenario, PipelineMode::Lcsf).map_err(|e| e.to_string())?;
    let sync = occupancy_sweep(&scenario, PipelineMode::Synchronous).map_err(|e| e.to_string())?;
    ensure(lcsf.is_unimodal() && lcsf.has_interior_max(), || {
        format!(
            "LCSF curve not unimodal with interior max: {:?}",
            lcsf.points.iter().map(|p| p.throughput).collect::<Vec<_>>()
        )
    })?;
    for (l, s) in lcsf.points.iter().zip(&sync.points) {
        ensure(l.throughput >= s.throughput, || {
            format!("{} workers: LCSF {} < synchronous {}", l.workers, l.throughput, s.throughput)
        })?;
    }
    Ok(format!(
        "LCSF unimodal, peak at {} workers (interior of {}..{}); LCSF >= synchronous at all {} points",
        lcsf.best_workers,
        scenario.workers[0],
        scenario.workers[scenario.workers.len() - 1],
        lcsf.points.len()
    ))
}

fn grid_order_traffic() -> Outcome {
    let gemm = L2Scenario::from_json(&read("scenarios/gemm-l2.json")?).map_err(|e| e.to_string())?;
    let input = match gemm.footprint {
        Footprint::Gemm(g) => g.input_bytes(),
        _ => return Err("gemm-l2.json is not a GEMM scenario".into()),
    };
    ensure(input >= 4 * gemm.l2.capacity_bytes, || format!("inputs {input} B < 4x L2 capacity"))?;
    let r = gemm.run().map_err(|e| e.to_string())?;
    let bytes = |name: &str| r.iter().find(|o| o.order.starts_with(name)).map(|o| o.report.hbm_bytes);
    let (sg, rm) = (
        bytes("super_grouped").ok_or("missing super_grouped")?,
        bytes("row_major").ok_or("missing row_major")?,
    );
    ensure(2 * sg <= rm, || format!("super_grouped {sg} B > 0.5 x row_major {rm} B"))?;

    let att = L2Scenario::from_json(&read("scenarios/attention-l2.json")?).map_err(|e| e.to_string())?;
    let r = att.run().map_err(|e| e.to_string())?;
    let by = |name: &str| {
        r.iter()
            .find(|o| o.order == name)
            .map(|o| o.report.hbm_bytes)
            .ok_or(format!("missing {name}"))
    };
    let (nhb, bhn) = (by("attention(N,H,B)")?, by("attention(B,H,N)")?);
    ensure(nhb < bhn, || format!("(N,H,B) {nhb} B >= (B,H,N) {bhn} B"))?;
    Ok(format!(
        "gemm super_grouped(8) {sg} B = {:.3} x row_major (<= 0.5); attention NHB {nhb} B < BHN {bhn} B",
        sg as f64 / rm as f64
    ))
}

fn persistence() -> Outcome {
    let scenario: KSweepScenario = serde_json::from_str(&read("scenarios/persistent-ksweep.json")?).map_err(|e| e.to_string())?;
    let points = k_sweep(&scenario, &preset_h100()).map_err(|e| e.to_string())?;
    for p in &points {
        ensure(p.makespan_persistent <= p.makespan_relaunch, || {
            format!("K={}: persistent {} > relaunch {}", p.k, p.makespan_persistent, p.makespan_relaunch)
        })?;
    }
    let (t, s) = (1.0e-6, 0.25e-6);
    let r = persistent_assign(133, 132, t, s).map_err(|e| e.to_string())?;
    let exact = r.waves == 2
        && r.makespan_relaunch == 2.0 * (s + t)
        && r.makespan_persistent == s + 2.0 * t
        && r.per_sm[0] == vec![0, 132]
        && r.per_sm[1..].iter().all(|v| v.len() == 1);
    ensure(exact, || format!("133 tasks on 132 SMs: {r:?}"))?;
    Ok(format!(
        "{} K points persistent <= relaunch; 133 tasks / 132 SMs = 2 waves (exact)",
        points.len()
    ))
}

fn supergroup_enumeration() -> Outcome {
    let traced_422 = vec![(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (3, 0), (2, 1), (3, 1)];
    let traced_322 = vec![(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (2, 1)];
    ensure(supergroup_order(4, 2, 2).map_err(|e| e.to_string())? == traced_422, || {
        "(4,2,2) sequence differs".into()
    })?;
    ensure(supergroup_order(3, 2, 2).map_err(|e| e.to_string())? == traced_322, || {
        "(3,2,2) sequence differs".into()
    })?;
    let mut cases = 0;
    for rows in 1..=16 {
        for cols in 1..=16 {
            for super_m in 1..=16 {
                let order = supergroup_order(rows, cols, super_m).map_err(|e| e.to_string())?;
                let distinct: HashSet<_> = order.iter().collect();
                let ok = order.len() == rows * cols && distinct.len() == rows * cols && order.iter().all(|&(r, c)| r < rows && c < cols);
                ensure(ok, || format!("({rows},{cols},{super_m}) is not a permutation"))?;
                cases += 1;
            }
        }
    }
    Ok(format!("(4,2,2) and (3,2,2) exact; {cases} extents <= 16 are permutations"))
}

fn random_profile(rng: &mut ChaCha8Rng) -> WorkProfile {
    let mut q = |scale: f64| {
        if rng.random_range(0..4) == 0 {
            0.0
        } else {
            rng.random_range(0.0..scale)
        }
    };
    WorkProfile {
        bytes_hbm: q(1e11),
        bytes_l2: q(1e11),
        bytes_l1: q(1e12),
        bytes_shared: q(1e12),
        ops_tensor: q(1e15),
        ops_alu: q(1e13),
        ops_fma: q(1e13),
        ops_xu: q(1e12),
        num_setups: q(500.0),
        num_syncs: q(1e5),
    }
}

fn cost_model_properties() -> Outcome {
    let m = preset_h100();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300);
    for i in 0..1000 {
        let w = random_profile(&mut rng);
        let c = estimate_cost(&w, &m).map_err(|e| e.to_string())?;
        let max = CostTerm::TIE_ORDER.iter().map(|&t| c.terms.get(t)).fold(0.0, f64::max);
        ensure(rel(c.overall, max + c.terms.setup + c.terms.sync), || {
            format!("profile {i}: overall != max + overhead")
        })?;
        ensure(c.terms.get(c.bound_by) == max, || {
            format!("profile {i}: bound_by is not the max term")
        })?;

        let mut more = w;
        let bump = rng.random_range(0.0..1e12);
        match rng.random_range(0..10) {
            0 => more.bytes_hbm += bump,
            1 => more.bytes_l2 += bump,
            2 => more.bytes_l1 += bump,
            3 => more.bytes_shared += bump,
            4 => more.ops_tensor += bump,
            5 => more.ops_alu += bump,
            6 => more.ops_fma += bump,
            7 => more.ops_xu += bump,
            8 => more.num_setups += bump / 1e10,
            _ => more.num_syncs += bump / 1e7,
        }
        let c_more = estimate_cost(&more, &m).map_err(|e| e.to_string())?;
        ensure(c_more.overall >= c.overall, || format!("profile {i}: more work got cheaper"))?;

        let f = rng.random_range(0.1..10.0);
        let fast = estimate_cost(&w, &m.scaled_rates(f)).map_err(|e| e.to_string())?;
        let overhead = c.terms.setup + c.terms.sync;
        ensure(rel((fast.overall - overhead) * f, c.overall - overhead), || {
            format!("profile {i}: rates x{f} did not scale the max term by 1/{f}")
        })?;
    }
    Ok("1000 profiles: max+overhead identity, monotonicity, rate-scale covariance (rel 1e-9)".into())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("bank-conflict table", bank_conflict_table),
        ("layout permutation + alignment", layout_permutation_and_alignment),
        ("swizzle selection", swizzle_selection),
        ("kernel-oracle equivalence", kernel_oracle_equivalence),
        ("online-softmax chunking invariance", online_softmax_chunking),
        ("LCSF safety/determinism", lcsf_safety_and_determinism),
        ("pipeline-depth trend", pipeline_depth_trend),
        ("occupancy curve", occupancy_curve),
        ("grid order", grid_order_traffic),
        ("persistence", persistence),
        ("supergroup enumeration", supergroup_enumeration),
        ("cost model", cost_model_properties),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
