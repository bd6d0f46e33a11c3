//! Parameter tables and `key=value` resolution: defaults, then the config
//! file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

pub struct Param {
    pub key: &'static str,
    /// `None` for keys without a default; such keys are optional unless the
    /// command asks for them with [`Resolved::require`].
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn p(key: &'static str, default: Option<&'static str>, help: &'static str) -> Param {
    Param { key, default, help }
}

pub struct CommandSpec {
    pub name: &'static str,
    pub about: &'static str,
    /// Module named in pipeline errors.
    pub module: &'static str,
    /// Name of a key that may also be given as the first positional argument.
    pub positional: Option<&'static str>,
    pub params: &'static [Param],
}

const OUT: Param = p("out", Some("."), "output directory");

pub const COMMANDS: &[CommandSpec] = &[
    CommandSpec {
        name: "inspect",
        about: "Print the header of an activation dataset",
        module: "activation_store",
        positional: Some("data"),
        params: &[p("data", None, "dataset file")],
    },
    CommandSpec {
        name: "split",
        about: "Split a dataset into train.saeact and val.saeact",
        module: "activation_store",
        positional: Some("data"),
        params: &[
            p("data", None, "dataset file"),
            p("fraction", Some("0.8"), "fraction of rows in the training part"),
            p("seed", Some("0"), "shuffle seed"),
            OUT,
        ],
    },
    CommandSpec {
        name: "train",
        about: "Train a sparse autoencoder; writes sae.saepar and train_report.txt",
        module: "sae_trainer",
        positional: None,
        params: &[
            p("data", None, "training dataset"),
            p("val", None, "optional validation dataset for the final metrics"),
            p("expansion", Some("8"), "expansion factor (width = expansion * input dim)"),
            p("activation", Some("batchtopk"), "relu | topk | batchtopk"),
            p("k", Some("20"), "active latents per sample for topk / batchtopk"),
            p("lambda", Some("0.001"), "L1 weight for relu"),
            p("groups", Some(""), "comma-separated Matryoshka prefix sizes, ending at the width"),
            p("unit-norm-decoder", Some("auto"), "auto | true | false"),
            p("steps", Some("100000"), "optimizer steps"),
            p("batch-size", Some("4096"), "minibatch size"),
            p("learning-rate", Some("auto"), "Adam step size; auto = 16 / (125 * sqrt(width))"),
            p("beta1", Some("0.9"), "Adam beta1"),
            p("beta2", Some("0.999"), "Adam beta2"),
            p("adam-epsilon", Some("1e-8"), "Adam epsilon"),
            p("loss-norm", Some("squared-l2"), "squared-l2 | l2"),
            p("log-every", Some("100"), "loss record interval"),
            p("calibration-batches", Some("16"), "batches for BatchTopK threshold calibration"),
            p("with-replacement", Some("false"), "sample minibatches with replacement"),
            p("seed", Some("0"), "initialization and shuffling seed"),
            OUT,
        ],
    },
    CommandSpec {
        name: "eval-ms",
        about: "Score monosemanticity of SAE latents (or raw neurons without --checkpoint)",
        module: "monosemanticity",
        positional: None,
        params: &[
            p("data", None, "activations fed to the SAE (or scored directly)"),
            p("checkpoint", None, "SAE checkpoint; omit to score the raw data columns"),
            p("embeddings", None, "embedding dataset defining sample similarity"),
            p("truth", None, "ground-truth file; similarity from concept codes instead of embeddings"),
            p("normalization", Some("pairs"), "pairs | relevance"),
            p("similarity", Some("auto"), "auto | dense | factored"),
            p("tile", Some("1024"), "tile rows for the dense similarity matrix"),
            p("layer", None, "layer tag for reports; defaults to the dataset's layer attribute"),
            OUT,
        ],
    },
    CommandSpec {
        name: "eval-hierarchy",
        about: "Per-level LCA depth and MS of a Matryoshka SAE",
        module: "hierarchy",
        positional: None,
        params: &[
            p("data", None, "activations with taxon ids in the metadata"),
            p("checkpoint", None, "SAE checkpoint"),
            p("taxonomy", None, "edge file: one 'child parent' pair per line"),
            p("levels", None, "optional level-name file: 'depth name' per line"),
            p("truth", None, "ground-truth file supplying the concept tree"),
            p("ms", None, "ms_report.txt of the same SAE"),
            p("groups", None, "level boundaries; defaults to the checkpoint's groups"),
            p("top", Some("16"), "top-activating samples per neuron"),
            OUT,
        ],
    },
    CommandSpec {
        name: "eval-uniqueness",
        about: "Jaccard overlap of top-activating sample sets across neurons",
        module: "hierarchy",
        positional: None,
        params: &[
            p("data", None, "activations"),
            p("checkpoint", None, "SAE checkpoint; omit to use the raw data columns"),
            p("top", Some("16"), "top-activating samples per neuron"),
            OUT,
        ],
    },
    CommandSpec {
        name: "steer",
        about: "Clamp one SAE latent on every token and write the decoded tokens",
        module: "steering",
        positional: None,
        params: &[
            p("data", None, "token dataset"),
            p("checkpoint", None, "SAE checkpoint"),
            p("neuron", None, "latent index (0-based)"),
            p("alpha", Some("100"), "clamped activation value"),
            OUT,
        ],
    },
    CommandSpec {
        name: "synth",
        about: "Generate a synthetic superposition dataset with ground truth",
        module: "synthetic_bench",
        positional: None,
        params: &[
            p("scenario", Some("standard"), "standard | hierarchical"),
            p("scenario-file", None, "key=value scenario description overriding the named scenario"),
            p("samples", None, "override the sample count"),
            p("seed", None, "override the scenario seed"),
            OUT,
        ],
    },
    CommandSpec {
        name: "report",
        about: "Consolidate run directories into MS and hierarchy tables",
        module: "cli",
        positional: None,
        params: &[p("runs", None, "comma-separated run directories"), OUT],
    },
];

pub fn command(name: &str) -> &'static CommandSpec {
    COMMANDS.iter().find(|c| c.name == name).expect("registered command")
}

/// Strips comments and blank lines; rejects keys the command does not know.
pub fn parse_config_text(text: &str, spec: &CommandSpec) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key=value", no + 1)))?;
        let key = k.trim().replace('_', "-");
        if !spec.params.iter().any(|p| p.key == key) {
            return Err(CliError::usage(format!(
                "config line {}: unknown key {key:?} for {}",
                no + 1,
                spec.name
            )));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

pub struct Resolved {
    pub command: &'static str,
    values: BTreeMap<String, String>,
}

impl Resolved {
    /// Layers defaults, then `file`, then `flags`.
    pub fn new(
        spec: &'static CommandSpec,
        file: BTreeMap<String, String>,
        flags: BTreeMap<String, String>,
    ) -> Self {
        let mut values: BTreeMap<String, String> = spec
            .params
            .iter()
            .filter_map(|p| p.default.map(|d| (p.key.to_string(), d.to_string())))
            .collect();
        values.extend(file);
        values.extend(flags);
        Self {
            command: spec.name,
            values,
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::usage(format!("{} needs --{key}", self.command)))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| CliError::usage(format!("invalid value {raw:?} for --{key}")))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key).map(|_| self.parse(key)).transpose()
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.require(key).map(PathBuf::from)
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        self.path("out")
    }

    /// One `key=value` line per resolved parameter, sorted by key.
    pub fn snapshot(&self) -> String {
        let mut out = format!("# resolved configuration for {}\n", self.command);
        for (k, v) in &self.values {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }

    pub fn write_snapshot(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::write(dir.join(format!("{}.config", self.command)), self.snapshot())
    }
}
