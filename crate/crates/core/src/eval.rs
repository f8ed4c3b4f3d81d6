//! Held-out metrics: next-token accuracy, perplexity and cloze-choice accuracy.

use std::io::Write;

use serde::Serialize;

use crate::corpus::ClozeItem;
use crate::error::{Error, Result};
use crate::toylm::{log_softmax_row, mean_cross_entropy, Scalar, ToyDecoder};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub next_token_accuracy: f64,
    pub perplexity: f64,
    pub cloze_accuracy: f64,
    pub cloze_items: usize,
}

/// Log-likelihood of one cloze option continuing its prefix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptionScore {
    pub item: usize,
    pub option: usize,
    pub is_answer: bool,
    pub log_likelihood: f64,
    pub mean_nll: f64,
    pub chosen: bool,
}

fn check_vocab<S: Scalar>(model: &ToyDecoder<S>, ids: impl IntoIterator<Item = u32>) -> Result<()> {
    let v = model.config().vocab_size;
    match ids.into_iter().find(|&t| t as usize >= v) {
        Some(t) => Err(Error::Dimension(format!("token {t} outside model vocabulary of {v}"))),
        None => Ok(()),
    }
}

/// Share of positions whose argmax prediction equals the next token.
pub fn next_token_accuracy<S: Scalar>(
    model: &ToyDecoder<S>,
    sequences: &[Vec<u32>],
    batch_size: usize,
) -> Result<f64> {
    check_vocab(model, sequences.iter().flatten().copied())?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for chunk in sequences.chunks(batch_size.max(1)) {
        let batch: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
        let (_, logits) = model.forward_batch(&batch)?;
        let mut row = 0;
        for seq in &batch {
            for pos in 0..seq.len() {
                if let Some(&next) = seq.get(pos + 1) {
                    let z = logits.row(row + pos);
                    let arg = z
                        .iter()
                        .enumerate()
                        .fold(0, |best, (i, &x)| if x > z[best] { i } else { best });
                    hits += usize::from(arg == next as usize);
                    total += 1;
                }
            }
            row += seq.len();
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

pub fn perplexity<S: Scalar>(model: &ToyDecoder<S>, sequences: &[Vec<u32>], batch_size: usize) -> Result<f64> {
    check_vocab(model, sequences.iter().flatten().copied())?;
    Ok(mean_cross_entropy(model, sequences, batch_size)?.exp())
}

/// Scores every option by its mean per-token negative log-likelihood after
/// the prefix; the lowest wins, ties to the lower option index.
pub fn score_cloze<S: Scalar>(model: &ToyDecoder<S>, items: &[ClozeItem]) -> Result<Vec<OptionScore>> {
    let max_len = model.config().max_seq_len;
    let mut out = Vec::new();
    let mut logp = vec![S::zero(); model.config().vocab_size];
    for (i, item) in items.iter().enumerate() {
        check_vocab(model, item.prefix.iter().chain(item.options.iter().flatten()).copied())?;
        if item.prefix.is_empty() || item.options.is_empty() {
            return Err(Error::Config(format!("cloze item {i} has an empty prefix or no options")));
        }
        let first = out.len();
        for (o, option) in item.options.iter().enumerate() {
            let mut seq = item.prefix.clone();
            seq.extend_from_slice(option);
            // keep the most recent context when the item is longer than the model window
            let cut = seq.len().saturating_sub(max_len);
            let seq = &seq[cut..];
            let (_, logits) = model.forward(seq)?;
            let start = seq.len() - option.len();
            let mut ll = 0.0;
            for (j, &tok) in option.iter().enumerate() {
                log_softmax_row(logits.row(start + j - 1), S::one(), &mut logp);
                ll += logp[tok as usize].as_f64();
            }
            out.push(OptionScore {
                item: i,
                option: o,
                is_answer: o == item.answer,
                log_likelihood: ll,
                mean_nll: -ll / option.len() as f64,
                chosen: false,
            });
        }
        let scores = &mut out[first..];
        let best = (0..scores.len()).fold(0, |b, j| if scores[j].mean_nll < scores[b].mean_nll { j } else { b });
        scores[best].chosen = true;
    }
    Ok(out)
}

pub fn cloze_accuracy(scores: &[OptionScore]) -> f64 {
    let items = scores.iter().filter(|s| s.option == 0).count();
    let correct = scores.iter().filter(|s| s.chosen && s.is_answer).count();
    if items == 0 {
        0.0
    } else {
        correct as f64 / items as f64
    }
}

pub fn write_cloze_csv<W: Write>(mut w: W, scores: &[OptionScore]) -> Result<()> {
    writeln!(w, "item,option,is_answer,log_likelihood,mean_nll,chosen")?;
    for s in scores {
        writeln!(
            w,
            "{},{},{},{:e},{:e},{}",
            s.item, s.option, s.is_answer as u8, s.log_likelihood, s.mean_nll, s.chosen as u8
        )?;
    }
    Ok(())
}

/// All three metrics plus the per-option scores.
pub fn evaluate<S: Scalar>(
    model: &ToyDecoder<S>,
    sequences: &[Vec<u32>],
    items: &[ClozeItem],
    batch_size: usize,
) -> Result<(Metrics, Vec<OptionScore>)> {
    if sequences.is_empty() && items.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let scores = score_cloze(model, items)?;
    let metrics = Metrics {
        next_token_accuracy: next_token_accuracy(model, sequences, batch_size)?,
        perplexity: perplexity(model, sequences, batch_size)?,
        cloze_accuracy: cloze_accuracy(&scores),
        cloze_items: items.len(),
    };
    Ok((metrics, scores))
}
