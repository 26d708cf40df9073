use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kol_core::datagen::{self, Dataset, ScenarioConfig, Split};
use kol_core::evaluation::{self, KernelBenchConfig, ScalingConfig};
use kol_core::kol::{self, FitOptions, KolModel, Mode};
use kol_core::optcontrol::TrueOdeConfig;
use kol_core::presets::{self, Fig7Config, Fig7Row, OcQuadConfig, OcQuadRow, ProviderKind};
use serde_json::json;

use crate::output::*;
use crate::{BenchArgs, EradArgs, EvalArgs, FitArgs, GenArgs, IntegrateArgs, OcquadArgs, PresetArgs, ServeArgs};

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

pub fn gen(a: GenArgs) -> CliResult {
    let mut cfg = ScenarioConfig::from_json(&read_config(&a.config)?)?;
    if let Some(seed) = a.seed {
        cfg.seeds.train = seed;
    }
    cfg.validate()?;
    let mut splits = Vec::new();
    if a.split != "test" {
        splits.push(Split::Train);
    }
    if a.split != "train" && cfg.sizes.test > 0 {
        splits.push(Split::Test);
    }
    if splits.is_empty() {
        return Err(config_err("nothing to generate: the test size is 0"));
    }
    ensure_dir(&a.out)?;
    let mut outputs = Vec::new();
    for split in splits {
        let ds = datagen::generate(&cfg, split)?;
        let dir = a.out.join(split_name(split));
        ds.write(&dir)?;
        println!(
            "{}: {} samples, model {}, {} compartments x {} nodes, seed {}, max conservation defect {:.1e}, min value {:.3e}",
            split_name(split),
            ds.len(),
            cfg.model.name(),
            ds.dim(),
            ds.grid().len(),
            cfg.seed_for(split),
            ds.max_conservation_defect(),
            ds.min_value()
        );
        outputs.push(dir);
    }
    write_manifest(
        &a.out.join("run-manifest.json"),
        "gen",
        json!({
            "scenario": to_value(&cfg),
            "seeds": { "train": cfg.seed_for(Split::Train), "test": cfg.seed_for(Split::Test) },
            "substeps": cfg.resolved_substeps()?,
        }),
        &outputs,
    )
}

fn sibling_manifest(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run-manifest.json");
    file.with_file_name(name)
}

pub fn fit(a: FitArgs) -> CliResult {
    let kernel = parse_kernel(&a.kernel)?;
    let mode: Mode = a.mode.parse()?;
    let opts = FitOptions {
        ridge: a.ridge,
        positivity: a.positivity,
    };
    let ds = Dataset::read(&a.data)?;
    let model = kol::fit(&ds.to_training_set(mode)?, &kernel, &opts)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    model.save(&a.out)?;
    println!(
        "fitted KOL-{} with {} on {} samples (ridge {:e}, positivity {}), min pivot {:.3e}, fit {:.3} s",
        mode.name(),
        kernel.label(),
        model.n_train(),
        model.ridge(),
        model.positivity(),
        model.min_pivot(),
        model.timing().total()
    );
    println!("wrote {}", a.out.display());
    write_manifest(
        &sibling_manifest(&a.out),
        "fit",
        json!({
            "data": a.data.display().to_string(),
            "scenario": to_value(&ds.config),
            "kernel": to_value(&kernel),
            "mode": mode,
            "fit": to_value(&opts),
        }),
        std::slice::from_ref(&a.out),
    )
}

pub fn eval(a: EvalArgs) -> CliResult {
    let model = KolModel::load(&a.model)?;
    let ds = Dataset::read(&a.test)?;
    let rep = evaluation::evaluate(&model, &ds)?;
    ensure_dir(&a.out)?;
    let names: Vec<String> = match model.model_kind() {
        Some(k) => k.compartments().iter().map(|s| s.to_string()).collect(),
        None => (0..model.dim()).map(|c| format!("x{c}")).collect(),
    };
    let report = json!({
        "p_err": rep.p_err,
        "n_samples": rep.per_sample.len(),
        "compartments": names,
        "per_compartment": rep.per_compartment,
        "per_sample": rep.per_sample,
    });
    let report_path = a.out.join("report.json");
    write_json(&report_path, &report)?;

    let mut summary = String::from("metric,value\n");
    summary.push_str(&format!("p_err,{}\n", num(rep.p_err)));
    for (n, e) in names.iter().zip(&rep.per_compartment) {
        summary.push_str(&format!("{n},{}\n", num(*e)));
    }
    let summary_path = a.out.join("summary.csv");
    write_text(&summary_path, &summary)?;

    let mut samples = String::from("sample,family,p_err\n");
    for (i, e) in rep.per_sample.iter().enumerate() {
        let family = ds.specs.get(i).map(|s| s.family()).unwrap_or("");
        samples.push_str(&format!("{i},{family},{}\n", num(*e)));
    }
    let samples_path = a.out.join("per_sample.csv");
    write_text(&samples_path, &samples)?;
    write_json(&a.out.join("timing.json"), &json!({ "predict_seconds": rep.predict_seconds }))?;

    println!("p_err = {:.6e} over {} samples", rep.p_err, rep.per_sample.len());
    for (n, e) in names.iter().zip(&rep.per_compartment) {
        println!("  {n:<3} {e:.6e}");
    }
    write_manifest(
        &a.out.join("run-manifest.json"),
        "eval",
        json!({
            "model": a.model.display().to_string(),
            "test": a.test.display().to_string(),
            "scenario": to_value(&ds.config),
            "split": ds.split,
        }),
        &[report_path, summary_path, samples_path],
    )
}

pub fn bench(a: BenchArgs) -> CliResult {
    ensure_dir(&a.out)?;
    match a.protocol.as_str() {
        "figs" => {
            let mut cfg: KernelBenchConfig = match &a.config {
                Some(p) => parse_json(&read_config(p)?, "figs config")?,
                None => presets::figs(),
            };
            if let Some(b) = a.batches {
                cfg.batches = b;
            }
            if let Some(s) = a.batch_size {
                cfg.batch_size = s;
            }
            let entries = evaluation::kernel_benchmark(&cfg)?;
            let stats_path = a.out.join("kernel_bench.csv");
            write_text(&stats_path, &evaluation::kernel_bench_csv(&entries))?;
            let mut long = String::from("kernel,mode,sample,error\n");
            for e in &entries {
                for (i, v) in e.sample_errors.iter().enumerate() {
                    long.push_str(&format!("{},{},{i},{}\n", e.kernel, e.mode.name(), num(*v)));
                }
            }
            let samples_path = a.out.join("kernel_bench_samples.csv");
            write_text(&samples_path, &long)?;
            let json_path = a.out.join("kernel_bench.json");
            write_json(&json_path, &entries)?;
            print!("{}", evaluation::kernel_bench_table(&entries));
            write_manifest(
                &a.out.join("run-manifest.json"),
                "bench",
                json!({ "protocol": "figs", "config": to_value(&cfg) }),
                &[stats_path, samples_path, json_path],
            )
        }
        _ => {
            let mut cfg: ScalingConfig = match &a.config {
                Some(p) => parse_json(&read_config(p)?, "table1 config")?,
                None => presets::table1(),
            };
            if let Some(s) = a.sizes {
                cfg.sizes = s;
            }
            let rows = evaluation::scaling_benchmark(&cfg)?;
            let csv_path = a.out.join("table1.csv");
            write_text(&csv_path, &evaluation::scaling_csv(&rows))?;
            let json_path = a.out.join("table1.json");
            write_json(&json_path, &rows)?;
            print!("{}", evaluation::scaling_table(&rows));
            write_manifest(
                &a.out.join("run-manifest.json"),
                "bench",
                json!({ "protocol": "table1", "config": to_value(&cfg) }),
                &[csv_path, json_path],
            )
        }
    }
}

fn providers(arg: Option<Vec<String>>) -> CliResult<Vec<ProviderKind>> {
    match arg {
        None => Ok(ProviderKind::ALL.to_vec()),
        Some(list) => list.iter().map(|s| s.parse().map_err(CliError::from)).collect(),
    }
}

fn erad_csv(rows: &[Fig7Row]) -> String {
    let mut s = String::from("provider,u_max,r_umax,branch,tau_star,te_star,s_at_te,te_at_zero,s_at_zero\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.provider,
            num(r.u_max),
            num(r.r_umax),
            r.branch,
            num(r.tau_star),
            num(r.te_star),
            num(r.s_at_te),
            opt_num(r.te_at_zero),
            opt_num(r.s_at_zero)
        ));
    }
    s
}

pub fn erad(a: EradArgs) -> CliResult {
    let mut cfg: Fig7Config = match &a.config {
        Some(p) => parse_json(&read_config(p)?, "erad config")?,
        None => presets::fig7(),
    };
    if let Some(u) = a.umax_sweep {
        cfg.u_max = u;
    }
    let kinds = providers(a.provider)?;
    ensure_dir(&a.out)?;
    let mut rows = Vec::new();
    let mut full = Vec::new();
    println!(
        "{:<8} {:>6} {:>7} {:>8} {:>10} {:>10} {:>12}",
        "provider", "u_max", "R_umax", "tau*", "t_e*", "S(t_e*)", "t_e(tau=0)"
    );
    for kind in kinds {
        let (r, f) = cfg.run(kind)?;
        for row in &r {
            println!(
                "{:<8} {:>6.3} {:>7.3} {:>8.2} {:>10.4} {:>10.4} {:>12}",
                row.provider,
                row.u_max,
                row.r_umax,
                row.tau_star,
                row.te_star,
                row.s_at_te,
                row.te_at_zero.map(|t| format!("{t:.4}")).unwrap_or_else(|| "none".into())
            );
        }
        for row in r.iter().filter(|row| row.branch == "tau_zero") {
            let note = if row.tau_star == 0.0 {
                "the sweep agrees".to_string()
            } else {
                format!("the sweep still finds tau* = {} with t_e* = {:.4}", row.tau_star, row.te_star)
            };
            println!(
                "note ({}, u_max {}): R_umax = {:.3} >= 1, tau* = 0 branch expected; {note}",
                row.provider, row.u_max, row.r_umax
            );
        }
        for res in &f {
            for w in &res.warnings {
                eprintln!("warning ({}, u_max {}): {w}", res.provider, res.u_max);
            }
        }
        rows.extend(r);
        full.extend(f);
    }
    let csv_path = a.out.join("erad.csv");
    write_text(&csv_path, &erad_csv(&rows))?;
    let json_path = a.out.join("erad.json");
    write_json(&json_path, &full)?;
    write_manifest(&a.out.join("run-manifest.json"), "erad", to_value(&cfg), &[csv_path, json_path])
}

fn ocquad_csv(rows: &[OcQuadRow]) -> String {
    let mut s = String::from("phases,c_i,c_u,provider,objective,true_objective,converged,evaluations,levels\n");
    for r in rows {
        let levels: Vec<String> = r.levels.iter().map(|v| num(*v)).collect();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.phases,
            num(r.c_i),
            num(r.c_u),
            r.provider,
            num(r.objective),
            num(r.true_objective),
            r.converged,
            r.evaluations,
            levels.join(";")
        ));
    }
    s
}

pub fn ocquad(a: OcquadArgs) -> CliResult {
    let mut cfg: OcQuadConfig = match &a.config {
        Some(p) => parse_json(&read_config(p)?, "ocquad config")?,
        None => presets::ocquad(),
    };
    if let Some(p) = a.phases {
        cfg.phases = p;
    }
    match (a.ci, a.cu) {
        (Some(ci), Some(cu)) => cfg.weights = vec![[ci, cu]],
        (None, None) => {}
        _ => return Err(config_err("--ci and --cu must be given together")),
    }
    let kinds = providers(a.provider)?;
    ensure_dir(&a.out)?;
    let rows = cfg.run(&kinds)?;

    // Cost table: true cost of each provider's schedule per scenario.
    let mut table: BTreeMap<(usize, String, String), BTreeMap<String, f64>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in &rows {
        let key = (r.phases, num(r.c_i), num(r.c_u));
        if !table.contains_key(&key) {
            order.push(key.clone());
        }
        table.entry(key).or_default().insert(r.provider.clone(), r.true_objective);
    }
    print!("{:>6} {:>8} {:>8}", "N", "C_I", "C_u");
    for k in &kinds {
        print!(" {:>14}", k.name());
    }
    println!();
    for key in &order {
        print!("{:>6} {:>8} {:>8}", key.0, key.1, key.2);
        for k in &kinds {
            match table[key].get(k.name()) {
                Some(v) => print!(" {v:>14.6e}"),
                None => print!(" {:>14}", "-"),
            }
        }
        println!();
    }
    for r in rows.iter().filter(|r| !r.converged) {
        eprintln!(
            "warning: {} did not converge for N = {}, C_I = {}, C_u = {}",
            r.provider, r.phases, r.c_i, r.c_u
        );
    }
    let csv_path = a.out.join("ocquad.csv");
    write_text(&csv_path, &ocquad_csv(&rows))?;
    let json_path = a.out.join("ocquad.json");
    write_json(&json_path, &rows)?;
    write_manifest(&a.out.join("run-manifest.json"), "ocquad", to_value(&cfg), &[csv_path, json_path])
}

pub fn integrate(a: IntegrateArgs) -> CliResult {
    let cfg: TrueOdeConfig = parse_json(&read_config(&a.config)?, "integrate config")?;
    let control = parse_control(&a.control)?;
    control.validate(cfg.grid.t_star())?;
    let u = control.discretize(&cfg.grid);
    let traj = cfg.provider()?.trajectory(&u.samples)?;
    ensure_dir(&a.out)?;
    let names = cfg.model.compartments();
    let times = cfg.grid.points();
    let mut csv = format!("t,u,{}\n", names.join(","));
    for (k, t) in times.iter().enumerate() {
        let cols: Vec<String> = (0..traj.rows()).map(|c| num(traj.get(c, k))).collect();
        csv.push_str(&format!("{},{},{}\n", num(*t), num(u.samples[k]), cols.join(",")));
    }
    let csv_path = a.out.join("trajectory.csv");
    write_text(&csv_path, &csv)?;
    let json_path = a.out.join("trajectory.json");
    write_json(
        &json_path,
        &json!({ "grid": cfg.grid, "times": times, "compartments": names, "control": u.samples, "values": traj.to_rows() }),
    )?;
    println!("integrated {} over {} nodes", cfg.model.name(), times.len());
    write_manifest(
        &a.out.join("run-manifest.json"),
        "integrate",
        json!({ "ode": to_value(&cfg), "control": to_value(&control) }),
        &[csv_path, json_path],
    )
}

pub fn preset(a: PresetArgs) -> CliResult {
    match a.name {
        None => {
            for n in presets::NAMES {
                println!("{n}");
            }
        }
        Some(n) => print!("{}", presets::text(&n)?),
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> CliResult {
    let assets = match a.assets {
        Some(dir) if dir.is_dir() => Some(dir),
        Some(dir) => {
            eprintln!("warning: assets directory {} not found; serving the API only", dir.display());
            None
        }
        None => None,
    };
    let cfg = kol_service::ServeConfig {
        bind: a.bind,
        assets,
        max_train: a.max_train,
        preload: a.load,
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start runtime: {e}")))?;
    rt.block_on(async move {
        kol_service::serve(
            cfg,
            |addr| {
                println!("listening on http://{addr}");
                use std::io::Write;
                let _ = std::io::stdout().flush();
            },
            shutdown_signal(),
        )
        .await
    })
    .map_err(|e| CliError::Runtime(format!("server: {e}")))?;
    println!("shut down");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
