use std::io::Write;
use std::path::Path;

use prokd_core::corpus::Tokens;
use prokd_core::diffcore::Tensor;
use prokd_core::losses::hard_label;
use prokd_core::model::NerModel;
use prokd_core::prototypes::{source_centroids, target_centroids, Centroids, PrototypeSet};
use prokd_core::training::TrainError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::commands::{load_config, load_data, prepare_out, CliResult};
use crate::{CliError, Common};

const TOKENS_HEADER: &str = "# prokd-tokens/1";

/// Hidden vectors of one language with the label each token is filed under.
struct Side {
    language: String,
    positions: Vec<(usize, usize)>,
    hidden: Tensor,
    labels: Vec<usize>,
    centroids: Centroids,
}

fn positions<S: Tokens>(sentences: &[S]) -> Vec<(usize, usize)> {
    sentences
        .iter()
        .enumerate()
        .flat_map(|(s, sent)| (0..sent.tokens().len()).map(move |i| (s, i)))
        .collect()
}

/// Source prototypes from gold tags; target prototypes weighted by the
/// model's own probabilities, and target tokens filed under its argmax.
fn sides(model: &NerModel, data: &prokd_core::training::TrainingData) -> CliResult<[Side; 2]> {
    let k = model.scheme().num_tags();
    let src_sents: Vec<&[String]> = data
        .source_train
        .sentences
        .iter()
        .map(|s| s.sentence.tokens.as_slice())
        .collect();
    let (src_hidden, _) = model.infer(&src_sents).map_err(TrainError::from)?;
    let src_labels: Vec<usize> = data
        .source_train
        .sentences
        .iter()
        .flat_map(|s| s.labels.iter().copied())
        .collect();
    let src_centroids = source_centroids(&src_hidden, &src_labels, k).map_err(TrainError::from)?;

    let tgt_sents: Vec<&[String]> = data
        .target_train
        .sentences
        .iter()
        .map(|s| s.tokens.as_slice())
        .collect();
    let (tgt_hidden, tgt_probs) = model.infer(&tgt_sents).map_err(TrainError::from)?;
    let tgt_labels = (0..tgt_probs.rows())
        .map(|r| hard_label(tgt_probs.row(r)))
        .collect();
    let tgt_centroids = target_centroids(&tgt_hidden, &tgt_probs).map_err(TrainError::from)?;

    Ok([
        Side {
            language: data.source_train.language.clone(),
            positions: positions(&data.source_train.sentences),
            hidden: src_hidden,
            labels: src_labels,
            centroids: src_centroids,
        },
        Side {
            language: data.target_train.language.clone(),
            positions: positions(&data.target_train.sentences),
            hidden: tgt_hidden,
            labels: tgt_labels,
            centroids: tgt_centroids,
        },
    ])
}

pub fn export_prototypes(common: &Common, checkpoint: &Path, samples: usize) -> CliResult<()> {
    let cfg = load_config(common)?;
    let out = prepare_out(common, &cfg)?;
    let loaded = load_data(&cfg)?;
    let model = NerModel::load(checkpoint).map_err(TrainError::from)?;
    let tags = model.scheme().tags().to_vec();
    let dim = model.config().hidden_dim;
    let sides = sides(&model, &loaded.data)?;

    let path = out.join("prototypes.tsv");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&path).map_err(|e| CliError::io(path.display(), e))?,
    );
    let mut rows = 0;
    for (i, side) in sides.iter().enumerate() {
        let mut set = PrototypeSet::new(&side.language, tags.len(), dim, cfg.prototypes.lambda)
            .map_err(TrainError::from)?;
        set.update(&side.centroids).map_err(TrainError::from)?;
        rows += tags.len() - set.uninitialized().len();
        set.write_tsv_rows(&tags, i == 0, &mut w)
            .map_err(TrainError::from)?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))?;

    let mut sampled = 0;
    if samples > 0 {
        let path = out.join("tokens.tsv");
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(&path).map_err(|e| CliError::io(path.display(), e))?,
        );
        let io = |e| CliError::io(path.display(), e);
        writeln!(w, "{TOKENS_HEADER}").map_err(io)?;
        write!(w, "language\tlabel\tsentence\tposition").map_err(io)?;
        for d in 0..dim {
            write!(w, "\tdim_{d}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for side in &sides {
            for (k, tag) in tags.iter().enumerate() {
                let mut members: Vec<usize> = (0..side.labels.len())
                    .filter(|&t| side.labels[t] == k)
                    .collect();
                members.shuffle(&mut rng);
                members.truncate(samples);
                members.sort_unstable();
                for t in members {
                    let (s, p) = side.positions[t];
                    write!(w, "{}\t{tag}\t{s}\t{p}", side.language).map_err(io)?;
                    for v in side.hidden.row(t) {
                        write!(w, "\t{v:?}").map_err(io)?;
                    }
                    writeln!(w).map_err(io)?;
                    sampled += 1;
                }
            }
        }
        w.flush().map_err(io)?;
    }
    println!("exported {rows} prototype rows and {sampled} token rows");
    Ok(())
}
