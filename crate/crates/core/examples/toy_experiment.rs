//! Trains every regime on a generated two-domain corpus and prints target mIoU.
//!
//! Usage: cargo run --release --example toy_experiment -- [steps] [seeds] [regimes] [out_dir]
//!
//! `seeds` and `regimes` are comma-separated lists; `all` runs every regime. `TOY_JSON` and `RUN_JSON` hold partial
//! JSON objects merged over the default corpus and run configs.

use std::time::Instant;

use mccseg::losses::Regime;
use mccseg::orchestrate::toy::{toy_run_config, write_toy_corpus, ToyConfig, TOY_RUN_SEED};
use mccseg::orchestrate::{train_run, RunConfig};
use serde_json::Value;

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

fn with_overrides<T: serde::Serialize + serde::de::DeserializeOwned>(base: T, var: &str) -> anyhow::Result<T> {
    let Ok(text) = std::env::var(var) else { return Ok(base) };
    let mut value = serde_json::to_value(base)?;
    merge(&mut value, serde_json::from_str(&text)?);
    Ok(serde_json::from_value(value)?)
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let seeds: Vec<u64> = args
        .get(2)
        .map(|s| s.split(',').map(str::parse).collect::<Result<_, _>>())
        .transpose()?
        .unwrap_or_else(|| vec![TOY_RUN_SEED]);
    let regimes: Vec<Regime> = match args.get(3).map(String::as_str) {
        None | Some("all") => Regime::ALL.to_vec(),
        Some(list) => list.split(',').map(str::parse).collect::<Result<_, _>>()?,
    };
    let tmp = tempfile::tempdir()?;
    let root = args.get(4).map(std::path::PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let toy = with_overrides(ToyConfig::default(), "TOY_JSON")?;
    let corpus = write_toy_corpus(&root.join("data"), &toy)?;
    let mut totals = vec![0.0; regimes.len()];
    for &seed in &seeds {
        for (k, &regime) in regimes.iter().enumerate() {
            let base = RunConfig {
                steps,
                ..toy_run_config(regime, &corpus, seed, root.join(format!("{}_{seed}", regime.as_str())))
            };
            let cfg = with_overrides(base, "RUN_JSON")?;
            let start = Instant::now();
            let summary = train_run(&cfg)?;
            let miou = summary.final_val_miou.unwrap_or(f64::NAN);
            totals[k] += miou;
            let curve: Vec<String> = summary
                .records
                .iter()
                .filter_map(|r| r.val_miou.map(|m| format!("{m:.3}")))
                .collect();
            println!(
                "seed {seed:<3} {:<13} miou {miou:.4}  {:.1}s  [{}]",
                regime.as_str(),
                start.elapsed().as_secs_f64(),
                curve.join(" ")
            );
        }
    }
    for (k, regime) in regimes.iter().enumerate() {
        println!("mean {:<13} {:.4}", regime.as_str(), totals[k] / seeds.len() as f64);
    }
    Ok(())
}
