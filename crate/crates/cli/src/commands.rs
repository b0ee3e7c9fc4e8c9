use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use noisenet::mnist::load_split;
use noisenet::sweep::{parse_grid, run_sweep, SweepSpec};
use noisenet::{Dataset, GhostVariant, Mitigation, Network, PoolSpec, Split, TrainConfig};
use sha2::{Digest, Sha256};

use crate::{DataArgs, EvalArgs, MitigateArgs, MitigationArgs, SweepArgs, TrainArgs};

fn load_data(args: &DataArgs, split: Split) -> Result<Dataset> {
    let data = load_split(&args.data_dir, split).with_context(|| {
        format!(
            "loading MNIST {split} split from {} (set --data-dir or {})",
            args.data_dir.display(),
            crate::DATA_ENV
        )
    })?;
    Ok(match args.limit {
        Some(n) => data.take(n),
        None => data,
    })
}

fn load_network(path: &Path) -> Result<Network> {
    let net = Network::load(path)?;
    net.ensure_mnist_topology()?;
    Ok(net)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let data = load_data(&args.data, Split::Train)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        validation_fraction: args.val_fraction,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        shuffle_seed: args.shuffle_seed.unwrap_or(args.seed),
        hidden: args.hidden.clone(),
        ..TrainConfig::default()
    };
    let (net, history) = noisenet::train(&data, &cfg, args.seed)?;
    net.save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    write(&args.history, &history.to_csv())?;

    let train_acc = net.accuracy(&data)?;
    println!("train accuracy: {train_acc} ({} samples)", data.len());
    if let Ok(test) = load_data(&args.data, Split::Test) {
        println!(
            "test accuracy: {} ({} samples)",
            net.accuracy(&test)?,
            test.len()
        );
    }
    println!("weights: {}", args.out.display());
    println!("history: {}", args.history.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let net = load_network(&args.weights)?;
    let data = load_data(&args.data, args.split)?;
    let acc = net.accuracy(&data)?;
    println!("split={} samples={} accuracy={acc}", args.split, data.len());
    Ok(())
}

fn mitigation(args: &MitigationArgs, layer: usize) -> Result<Option<Mitigation>> {
    Ok(match (args.pool, &args.ghost) {
        (Some(_), Some(_)) => bail!("--pool and --ghost are mutually exclusive"),
        (Some(m), None) => Some(Mitigation::Pool(PoolSpec { m, layer })),
        (None, Some(label)) => Some(Mitigation::Ghost {
            variant: GhostVariant::parse(label, args.ghost_bias)?,
            layer,
        }),
        (None, None) => None,
    })
}

fn parse_layer(text: &str, net: &Network) -> Result<usize> {
    let layers = net.layers().len();
    let layer = match text {
        "hidden" => 1,
        "output" => layers,
        n => n
            .parse()
            .with_context(|| format!("--layer must be hidden, output or an index, got {n:?}"))?,
    };
    if layer == 0 || layer > layers {
        bail!("--layer {layer} outside 1..={layers}");
    }
    Ok(layer)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let net = load_network(&args.weights)?;
    let layer = parse_layer(&args.layer, &net)?;
    let spec = SweepSpec {
        kind: args.noise,
        layer,
        grid: parse_grid(&args.grid)?,
        repeats: args.repeats,
        seed: args.seed,
        split: args.split,
        mitigation: mitigation(&args.mitigation, 1)?,
    };
    let data = load_data(&args.data, args.split)?;
    let mut result = run_sweep(&net, &spec, &data)?;
    result.provenance.network = Some(format!("sha256:{}", sha256_file(&args.weights)?));

    let csv = result.to_csv();
    match &args.out {
        Some(out) => {
            write(out, &csv)?;
            let meta = serde_json::json!({
                "weights": args.weights.display().to_string(),
                "samples": data.len(),
                "provenance": result.provenance,
            });
            write(
                &meta_path(out),
                &(serde_json::to_string_pretty(&meta)? + "\n"),
            )?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn mitigate(args: MitigateArgs) -> Result<()> {
    let net = load_network(&args.weights)?;
    let Some(m) = mitigation(&args.mitigation, args.layer)? else {
        bail!("mitigate needs --pool M or --ghost I|II|III");
    };
    let out = m.apply(&net)?;
    out.save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("{m}: widths {:?} -> {:?}", net.widths(), out.widths());
    Ok(())
}
