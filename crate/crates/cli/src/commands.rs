use std::fs;
use std::path::Path;

use saescope::checkpoint::{read_checkpoint, write_checkpoint};
use saescope::hierarchy::{jaccard_uniqueness, level_summary, neuron_lca_depth, NeuronDepth, TaxonomyTree};
use saescope::model::{encode_batch, Mode};
use saescope::monosemanticity::{
    ms_all_with, top_activating, FactoredSimilarity, MsNormalization, MsReport, Similarity,
};
use saescope::steering::{steer_tokens, InterventionSpec};
use saescope::store::{read_dataset, split_dataset};
use saescope::synthetic::{generate, GroundTruth, ScenarioConfig};
use saescope::trainer::{train_with_validation, LossNorm, TrainConfig};
use saescope::{Activation, ActivationDataset, Matrix, SaeConfig, SaeParams};

use crate::config::Resolved;
use crate::report::{self, RunInfo};
use crate::{CliError, InModule};

/// Above this many samples `similarity=auto` avoids the dense `N × N` matrix.
const DENSE_LIMIT: usize = 4096;

pub fn dispatch(name: &str, module: &'static str, r: &Resolved) -> Result<(), CliError> {
    match name {
        "inspect" => inspect(r, module),
        "split" => split(r, module),
        "train" => train(r, module),
        "eval-ms" => eval_ms(r, module),
        "eval-hierarchy" => eval_hierarchy(r, module),
        "eval-uniqueness" => eval_uniqueness(r, module),
        "steer" => steer(r, module),
        "synth" => synth(r, module),
        "report" => report::run(r, module),
        other => Err(CliError::usage(format!("unknown command {other}"))),
    }
}

fn write(path: impl AsRef<Path>, text: &str) -> Result<(), CliError> {
    fs::write(path, text).in_module("cli")
}

/// Prefixes load errors with the offending path.
fn load<T, E: std::fmt::Display>(
    path: &Path,
    module: &'static str,
    read: impl FnOnce(&Path) -> Result<T, E>,
) -> Result<T, CliError> {
    read(path).map_err(|e| CliError::Pipeline {
        module,
        message: format!("{}: {e}", path.display()),
    })
}

fn dataset(path: &Path) -> Result<ActivationDataset, CliError> {
    load(path, "activation_store", |p| read_dataset(p))
}

fn checkpoint(path: &Path) -> Result<(SaeParams, SaeConfig), CliError> {
    load(path, "sae_model", |p| read_checkpoint(p))
}

fn ground_truth(path: &Path) -> Result<GroundTruth, CliError> {
    load(path, "synthetic_bench", |p| GroundTruth::read(p))
}

fn inspect(r: &Resolved, _module: &'static str) -> Result<(), CliError> {
    let ds = dataset(&r.path("data")?)?;
    print!("{}", ds.header().describe());
    for (k, v) in ds.attributes() {
        println!("{k}={v}");
    }
    Ok(())
}

fn split(r: &Resolved, module: &'static str) -> Result<(), CliError> {
    let ds = dataset(&r.path("data")?)?;
    let (train, val) = split_dataset(&ds, r.parse("fraction")?, r.parse("seed")?).in_module(module)?;
    let out = r.out_dir()?;
    train.write(out.join("train.saeact")).in_module(module)?;
    val.write(out.join("val.saeact")).in_module(module)?;
    println!("train_rows={} val_rows={}", train.rows(), val.rows());
    Ok(())
}

fn sae_config(r: &Resolved, input_dim: usize) -> Result<SaeConfig, CliError> {
    let activation = match r.require("activation")? {
        "relu" => Activation::ReluL1 { lambda: r.parse("lambda")? },
        "topk" => Activation::TopK { k: r.parse("k")? },
        "batchtopk" => Activation::BatchTopK { k: r.parse("k")? },
        other => return Err(CliError::usage(format!("unknown activation {other:?} (relu, topk, batchtopk)"))),
    };
    let mut sae = SaeConfig::new(input_dim, r.parse("expansion")?, activation);
    if let Some(groups) = r.get("groups") {
        let parsed = groups
            .split(',')
            .map(|g| g.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| CliError::usage(format!("invalid value {groups:?} for --groups")))?;
        sae = sae.with_groups(parsed);
    }
    match r.require("unit-norm-decoder")? {
        "auto" => {}
        v => {
            let on = v
                .parse()
                .map_err(|_| CliError::usage(format!("invalid value {v:?} for --unit-norm-decoder")))?;
            sae = sae.with_unit_norm_decoder(on);
        }
    }
    Ok(sae)
}

fn train_config(r: &Resolved) -> Result<TrainConfig, CliError> {
    let learning_rate = match r.require("learning-rate")? {
        "auto" => None,
        _ => Some(r.parse("learning-rate")?),
    };
    let loss_norm: LossNorm = r
        .require("loss-norm")?
        .parse()
        .map_err(|e: saescope::Error| CliError::usage(e.to_string()))?;
    Ok(TrainConfig {
        steps: r.parse("steps")?,
        batch_size: r.parse("batch-size")?,
        learning_rate,
        adam_beta1: r.parse("beta1")?,
        adam_beta2: r.parse("beta2")?,
        adam_epsilon: r.parse("adam-epsilon")?,
        seed: r.parse("seed")?,
        loss_norm,
        log_every: r.parse("log-every")?,
        calibration_batches: r.parse("calibration-batches")?,
        with_replacement: r.parse("with-replacement")?,
    })
}

fn train(r: &Resolved, module: &'static str) -> Result<(), CliError> {
    let data = dataset(&r.path("data")?)?;
    let val = r.opt_path("val").map(|p| dataset(&p)).transpose()?;
    let sae = sae_config(r, data.cols())?;
    sae.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let cfg = train_config(r)?;
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let (params, report) = train_with_validation(&data, val.as_ref(), &sae, &cfg).in_module(module)?;
    let out = r.out_dir()?;
    write_checkpoint(out.join("sae.saepar"), &params, &sae).in_module(module)?;
    let text = report.to_text();
    write(out.join("train_report.txt"), &text)?;
    print!("{}", text.lines().last().map(|l| format!("{l}\n")).unwrap_or_default());
    Ok(())
}

/// Activations to score: SAE latents when a checkpoint is given, else the
/// data columns themselves.
fn activations(
    r: &Resolved,
    data: &ActivationDataset,
) -> Result<(Matrix<f32>, Option<(SaeParams, SaeConfig)>), CliError> {
    match r.opt_path("checkpoint") {
        Some(path) => {
            let (params, sae) = checkpoint(&path)?;
            let acts = encode_batch(data.data(), &params, &sae, Mode::Inference).in_module("sae_model")?;
            Ok((acts, Some((params, sae))))
        }
        None => Ok((data.data().clone(), None)),
    }
}

fn check_aligned(data: &ActivationDataset, other: &ActivationDataset, what: &str) -> Result<(), CliError> {
    if data.rows() != other.rows() {
        return Err(CliError::Pipeline {
            module: "monosemanticity",
            message: format!("{what} has {} rows, activations have {}", other.rows(), data.rows()),
        });
    }
    if !data.meta().is_empty() && !other.meta().is_empty() {
        if let Some(n) = (0..data.rows()).find(|&n| data.meta()[n].sample_id != other.meta()[n].sample_id) {
            return Err(CliError::Pipeline {
                module: "monosemanticity",
                message: format!(
                    "{what} row {n} is sample {:?}, activations row {n} is {:?}",
                    other.meta()[n].sample_id,
                    data.meta()[n].sample_id
                ),
            });
        }
    }
    Ok(())
}

fn eval_ms(r: &Resolved, module: &'static str) -> Result<(), CliError> {
    let data = dataset(&r.path("data")?)?;
    let (acts, model) = activations(r, &data)?;
    let norm: MsNormalization = r
        .require("normalization")?
        .parse()
        .map_err(|e: saescope::Error| CliError::usage(e.to_string()))?;
    let factored = match (r.opt_path("truth"), r.opt_path("embeddings")) {
        (Some(path), None) => {
            let truth = ground_truth(&path)?;
            if truth.codes.rows() != data.rows() {
                return Err(CliError::Pipeline {
                    module,
                    message: format!("ground truth has {} samples, activations have {}", truth.codes.rows(), data.rows()),
                });
            }
            FactoredSimilarity::from_embeddings(&truth.codes).in_module(module)?
        }
        (None, Some(path)) => {
            let emb = dataset(&path)?;
            check_aligned(&data, &emb, "embedding dataset")?;
            FactoredSimilarity::from_embeddings(emb.data()).in_module(module)?
        }
        _ => return Err(CliError::usage("eval-ms needs exactly one of --embeddings or --truth")),
    };
    let dense = match r.require("similarity")? {
        "auto" => data.rows() <= DENSE_LIMIT,
        "dense" => true,
        "factored" => false,
        other => return Err(CliError::usage(format!("unknown similarity {other:?} (auto, dense, factored)"))),
    };
    let report = if dense {
        let tile: usize = r.parse("tile")?;
        if tile == 0 {
            return Err(CliError::usage("--tile must be positive"));
        }
        score(&acts, &factored.to_dense(tile), norm, module)?
    } else {
        score(&acts, &factored, norm, module)?
    };
    let info = RunInfo {
        sae_type: model.as_ref().map_or("No SAE".to_string(), |(_, sae)| report::sae_type(sae)),
        layer: r
            .get("layer")
            .or_else(|| data.attribute("layer"))
            .unwrap_or("-")
            .to_string(),
        expansion: model
            .as_ref()
            .map_or("-".to_string(), |(_, sae)| sae.expansion_factor.to_string()),
        normalization: norm.name().to_string(),
    };
    let out = r.out_dir()?;
    write(out.join(report::MS_REPORT), &report.to_text())?;
    write(out.join(report::RUN_INFO), &info.to_text())?;
    let s = &report.summary;
    println!(
        "best={:.4} worst={:.4} mean={:.4} median={:.4} degenerate={}",
        s.best,
        s.worst,
        s.mean,
        report.median(),
        report.degenerate_count()
    );
    Ok(())
}

fn score(acts: &Matrix<f32>, sim: &impl Similarity, norm: MsNormalization, module: &'static str) -> Result<MsReport, CliError> {
    ms_all_with(acts, sim, norm).in_module(module)
}

fn top_sets(acts: &Matrix<f32>, top: usize, module: &'static str) -> Result<Vec<Vec<usize>>, CliError> {
    let count = top.min(acts.rows());
    (0..acts.cols())
        .map(|k| top_activating(acts, k, count).map(|t| t.indices))
        .collect::<Result<_, _>>()
        .in_module(module)
}

fn eval_hierarchy(r: &Resolved, module: &'static str) -> Result<(), CliError> {
    let data = dataset(&r.path("data")?)?;
    let (acts, model) = activations(r, &data)?;
    let sae = model
        .map(|(_, sae)| sae)
        .ok_or_else(|| CliError::usage("eval-hierarchy needs --checkpoint"))?;
    let tree = match (r.opt_path("taxonomy"), r.opt_path("truth")) {
        (Some(edges), None) => load(&edges, module, |e| TaxonomyTree::read(e, r.opt_path("levels").as_deref()))?,
        (None, Some(truth)) => ground_truth(&truth)?
            .concept_tree
            .ok_or_else(|| CliError::Pipeline {
                module,
                message: "ground truth has no concept tree".into(),
            })?,
        _ => return Err(CliError::usage("eval-hierarchy needs exactly one of --taxonomy or --truth")),
    };
    let groups: Vec<usize> = match r.get("groups") {
        Some(g) => g
            .split(',')
            .map(|x| x.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::usage(format!("invalid value {g:?} for --groups")))?,
        None => sae.matryoshka_groups.clone().ok_or_else(|| {
            CliError::usage("checkpoint has no Matryoshka groups; pass --groups")
        })?,
    };
    let ms_path = r.path("ms")?;
    let ms = MsReport::from_text(&fs::read_to_string(&ms_path).in_module("cli")?).in_module("monosemanticity")?;
    if data.meta().is_empty() {
        return Err(CliError::Pipeline {
            module,
            message: "dataset has no sample metadata to take taxon ids from".into(),
        });
    }
    let depths = top_sets(&acts, r.parse("top")?, module)?
        .iter()
        .map(|set| {
            let taxa: Vec<Option<&str>> = set.iter().map(|&n| data.meta()[n].taxon_id.as_deref()).collect();
            neuron_lca_depth(&tree, &taxa)
        })
        .collect::<Result<Vec<NeuronDepth>, _>>()
        .in_module(module)?;
    let report = level_summary(&groups, &depths, &ms).in_module(module)?;
    let mut text = report.to_text();
    for depth in 0..=tree.height() {
        if let Some(name) = tree.level_name(depth) {
            text.push_str(&format!("# depth {depth} = {name}\n"));
        }
    }
    write(r.out_dir()?.join(report::HIERARCHY_REPORT), &text)?;
    print!("{text}");
    Ok(())
}

fn eval_uniqueness(r: &Resolved, module: &'static str) -> Result<(), CliError> {
    let data = dataset(&r.path("data")?)?;
    let (acts, _) = activations(r, &data)?;
    let top: usize = r.parse("top")?;
    let report = jaccard_uniqueness(&top_sets(&acts, top, module)?, top.min(acts.rows()));
    let text = report.to_text();
    write(r.out_dir()?.join("uniqueness_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn steer(r: &Resolved, module: &'static str) -> Result<(), CliError> {
    let tokens = dataset(&r.path("data")?)?;
    let (params, sae) = checkpoint(&r.path("checkpoint")?)?;
    let spec = InterventionSpec::new(r.parse("neuron")?, r.parse("alpha")?);
    let steered = steer_tokens(tokens.data(), &params, &sae, &spec).in_module(module)?;
    let mut out = ActivationDataset::new(steered, tokens.meta().to_vec()).in_module(module)?;
    for (k, v) in tokens.attributes() {
        out = out.with_attribute(k, v).in_module(module)?;
    }
    out.write(r.out_dir()?.join("steered.saeact")).in_module("activation_store")?;
    println!("tokens={} neuron={} alpha={}", out.rows(), spec.neuron, spec.value);
    Ok(())
}

fn synth(r: &Resolved, module: &'static str) -> Result<(), CliError> {
    let mut cfg = match r.opt_path("scenario-file") {
        Some(path) => ScenarioConfig::from_text(&fs::read_to_string(path).in_module(module)?).in_module(module)?,
        None => ScenarioConfig::by_name(r.require("scenario")?).map_err(|e| CliError::usage(e.to_string()))?,
    };
    if let Some(n) = r.parse_opt("samples")? {
        cfg.samples = n;
    }
    if let Some(seed) = r.parse_opt("seed")? {
        cfg.seed = seed;
    }
    let (data, truth) = generate(&cfg).in_module(module)?;
    let out = r.out_dir()?;
    data.write(out.join("data.saeact")).in_module("activation_store")?;
    truth.write(out.join("truth.saetru")).in_module(module)?;
    write(out.join("scenario.txt"), &cfg.to_text())?;
    println!(
        "scenario={} rows={} cols={} concepts={}",
        cfg.name,
        data.rows(),
        data.cols(),
        cfg.concepts
    );
    Ok(())
}
