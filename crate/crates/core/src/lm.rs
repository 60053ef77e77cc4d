//! Backoff trigram language modeling with Witten-Bell smoothing, perplexity,
//! EM-fit linear interpolation of component models, and ARPA interchange.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

pub const SENT_BEGIN: &str = "<s>";
pub const SENT_END: &str = "</s>";
pub const UNKNOWN: &str = "<unk>";

/// Floor probability mass granted to the unknown token per context.
const UNK_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("dev text is empty")]
    EmptyDev,
    #[error("no component models")]
    NoComponents,
    #[error("ARPA parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("ARPA section {section} declares {declared} entries but lists {found}")]
    CountMismatch {
        section: String,
        declared: usize,
        found: usize,
    },
}

/// Anything that can score a word in context (up to 2 history tokens used).
pub trait LanguageModel {
    /// Natural-log probability of `word` given the trailing context.
    fn log_prob(&self, context: &[&str], word: &str) -> f64;
}

/// Witten-Bell smoothed backoff trigram model over a closed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// Linear unigram probabilities per word id; sentence-begin gets a
    /// vanishing stand-in since it is never predicted.
    p1: Vec<f64>,
    bow1: BTreeMap<u32, f64>,
    p2: BTreeMap<(u32, u32), f64>,
    bow2: BTreeMap<(u32, u32), f64>,
    p3: BTreeMap<(u32, u32, u32), f64>,
}

impl NGramModel {
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn id(&self, token: &str) -> u32 {
        match self.index.get(token) {
            Some(&i) => i,
            None => *self.index.get(UNKNOWN).unwrap_or(&0),
        }
    }

    fn p_uni(&self, w: u32) -> f64 {
        self.p1[w as usize]
    }

    fn p_bi(&self, v: u32, w: u32) -> f64 {
        match self.p2.get(&(v, w)) {
            Some(&p) => p,
            None => self.bow1.get(&v).copied().unwrap_or(1.0) * self.p_uni(w),
        }
    }

    fn p_tri(&self, u: u32, v: u32, w: u32) -> f64 {
        match self.p3.get(&(u, v, w)) {
            Some(&p) => p,
            None => self.bow2.get(&(u, v)).copied().unwrap_or(1.0) * self.p_bi(v, w),
        }
    }

    /// Linear probability with backoff, using up to two context tokens.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let w = self.id(word);
        match context.len() {
            0 => self.p_uni(w),
            1 => self.p_bi(self.id(context[0]), w),
            _ => {
                let u = self.id(context[context.len() - 2]);
                let v = self.id(context[context.len() - 1]);
                self.p_tri(u, v, w)
            }
        }
    }
}

impl LanguageModel for NGramModel {
    fn log_prob(&self, context: &[&str], word: &str) -> f64 {
        self.prob(context, word).max(f64::MIN_POSITIVE).ln()
    }
}

/// Train a Witten-Bell backoff trigram on tokenized sentences. When
/// `vocabulary` is given it closes the event space (words outside it map to
/// the unknown token); otherwise the vocabulary is the corpus types plus
/// the reserved tokens.
pub fn train_lm(
    corpus: &[Vec<String>],
    vocabulary: Option<&[String]>,
) -> Result<NGramModel, LmError> {
    if corpus.is_empty() || corpus.iter().all(|s| s.is_empty()) {
        return Err(LmError::EmptyCorpus);
    }
    let mut vocab: Vec<String> = Vec::new();
    let push_unique = |v: &mut Vec<String>, t: &str| {
        if !v.iter().any(|x| x == t) {
            v.push(t.to_string());
        }
    };
    push_unique(&mut vocab, SENT_BEGIN);
    push_unique(&mut vocab, SENT_END);
    push_unique(&mut vocab, UNKNOWN);
    match vocabulary {
        Some(given) => {
            for t in given {
                push_unique(&mut vocab, t);
            }
        }
        None => {
            let types: BTreeSet<&String> = corpus.iter().flatten().collect();
            for t in types {
                push_unique(&mut vocab, t);
            }
        }
    }
    let index: HashMap<String, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let begin = index[SENT_BEGIN];
    let end = index[SENT_END];
    let unk = index[UNKNOWN];

    let mut c1: HashMap<u32, usize> = HashMap::new();
    let mut c2: HashMap<(u32, u32), usize> = HashMap::new();
    let mut c3: HashMap<(u32, u32, u32), usize> = HashMap::new();
    for sent in corpus {
        if sent.is_empty() {
            continue;
        }
        let mut ids: Vec<u32> = vec![begin];
        ids.extend(
            sent.iter()
                .map(|t| index.get(t.as_str()).copied().unwrap_or(unk)),
        );
        ids.push(end);
        for &w in &ids[1..] {
            *c1.entry(w).or_default() += 1;
        }
        for pair in ids.windows(2) {
            *c2.entry((pair[0], pair[1])).or_default() += 1;
        }
        for tri in ids.windows(3) {
            *c3.entry((tri[0], tri[1], tri[2])).or_default() += 1;
        }
    }

    // Event space excludes sentence-begin.
    let n_events = vocab.len() - 1;
    let p0 = 1.0 / n_events as f64;
    let n_tokens: usize = c1.values().sum();
    let t1 = c1.len();
    let denom1 = (n_tokens + t1) as f64;
    let mut p1 = vec![0.0; vocab.len()];
    for (i, _) in vocab.iter().enumerate() {
        let w = i as u32;
        if w == begin {
            p1[i] = f64::MIN_POSITIVE;
            continue;
        }
        let c = c1.get(&w).copied().unwrap_or(0) as f64;
        p1[i] = c / denom1 + (t1 as f64 / denom1) * p0;
    }
    // unknown-token floor, renormalized over the event space
    if p1[unk as usize] < UNK_FLOOR {
        let deficit = UNK_FLOOR - p1[unk as usize];
        p1[unk as usize] = UNK_FLOOR;
        let others: f64 = p1
            .iter()
            .enumerate()
            .filter(|(i, _)| *i as u32 != begin && *i as u32 != unk)
            .map(|(_, p)| p)
            .sum();
        let scale = (others - deficit) / others;
        for (i, p) in p1.iter_mut().enumerate() {
            if i as u32 != begin && i as u32 != unk {
                *p *= scale;
            }
        }
    }

    // bigram level: contexts and their type counts
    let mut ctx1_count: HashMap<u32, usize> = HashMap::new();
    let mut ctx1_types: HashMap<u32, usize> = HashMap::new();
    for ((v, _), &c) in &c2 {
        *ctx1_count.entry(*v).or_default() += c;
        *ctx1_types.entry(*v).or_default() += 1;
    }
    let mut bow1 = BTreeMap::new();
    let mut p2 = BTreeMap::new();
    for ((v, w), &c) in &c2 {
        let total = ctx1_count[v] as f64;
        let types = ctx1_types[v] as f64;
        let lambda = types / (total + types);
        p2.insert((*v, *w), c as f64 / (total + types) + lambda * p1[*w as usize]);
    }
    for (v, &types) in &ctx1_types {
        let total = ctx1_count[v] as f64;
        bow1.insert(*v, types as f64 / (total + types as f64));
    }

    // trigram level
    let mut ctx2_count: HashMap<(u32, u32), usize> = HashMap::new();
    let mut ctx2_types: HashMap<(u32, u32), usize> = HashMap::new();
    for ((u, v, _), &c) in &c3 {
        *ctx2_count.entry((*u, *v)).or_default() += c;
        *ctx2_types.entry((*u, *v)).or_default() += 1;
    }
    let mut bow2 = BTreeMap::new();
    let mut p3 = BTreeMap::new();
    let model_so_far = |p2: &BTreeMap<(u32, u32), f64>, bow1: &BTreeMap<u32, f64>, v: u32, w: u32| {
        match p2.get(&(v, w)) {
            Some(&p) => p,
            None => bow1.get(&v).copied().unwrap_or(1.0) * p1[w as usize],
        }
    };
    for ((u, v, w), &c) in &c3 {
        let total = ctx2_count[&(*u, *v)] as f64;
        let types = ctx2_types[&(*u, *v)] as f64;
        let lambda = types / (total + types);
        let lower = model_so_far(&p2, &bow1, *v, *w);
        p3.insert((*u, *v, *w), c as f64 / (total + types) + lambda * lower);
    }
    for (ctx, &types) in &ctx2_types {
        let total = ctx2_count[ctx] as f64;
        bow2.insert(*ctx, types as f64 / (total + types as f64));
    }

    Ok(NGramModel {
        vocab,
        index,
        p1,
        bow1,
        p2,
        bow2,
        p3,
    })
}

/// exp of negative mean log-probability per token; sentence-end is scored,
/// sentence-begin only conditions.
pub fn perplexity<M: LanguageModel + ?Sized>(model: &M, text: &[Vec<String>]) -> Result<f64, LmError> {
    let (ll, n) = log_likelihood(model, text)?;
    Ok((-ll / n as f64).exp())
}

fn log_likelihood<M: LanguageModel + ?Sized>(
    model: &M,
    text: &[Vec<String>],
) -> Result<(f64, usize), LmError> {
    let mut ll = 0.0;
    let mut n = 0usize;
    for sent in text {
        if sent.is_empty() {
            continue;
        }
        let mut tokens: Vec<&str> = vec![SENT_BEGIN];
        tokens.extend(sent.iter().map(String::as_str));
        tokens.push(SENT_END);
        for i in 1..tokens.len() {
            let lo = i.saturating_sub(2);
            ll += model.log_prob(&tokens[lo..i], tokens[i]);
            n += 1;
        }
    }
    if n == 0 {
        return Err(LmError::EmptyDev);
    }
    Ok((ll, n))
}

/// Weighted linear mixture of component models.
#[derive(Debug, Clone)]
pub struct InterpolatedModel {
    pub components: Vec<NGramModel>,
    pub weights: Vec<f64>,
}

impl InterpolatedModel {
    pub fn new(components: Vec<NGramModel>, weights: Vec<f64>) -> Result<Self, LmError> {
        if components.is_empty() || components.len() != weights.len() {
            return Err(LmError::NoComponents);
        }
        Ok(InterpolatedModel {
            components,
            weights,
        })
    }
}

impl LanguageModel for InterpolatedModel {
    fn log_prob(&self, context: &[&str], word: &str) -> f64 {
        let p: f64 = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(m, &w)| w * m.prob(context, word))
            .sum();
        p.max(f64::MIN_POSITIVE).ln()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub weights: Vec<f64>,
    /// Mean dev log-likelihood after each EM iteration; non-decreasing.
    pub ll_trace: Vec<f64>,
}

/// EM fit of interpolation weights that minimize dev-set perplexity.
/// Uniform initialization; stops when the mean log-likelihood gain drops
/// below `tol` or after `max_iters` iterations.
pub fn fit_interpolation_weights(
    components: &[NGramModel],
    dev_text: &[Vec<String>],
    tol: f64,
    max_iters: usize,
) -> Result<FitResult, LmError> {
    if components.is_empty() {
        return Err(LmError::NoComponents);
    }
    let k = components.len();
    // per-token component probabilities, computed once
    let mut token_probs: Vec<Vec<f64>> = Vec::new();
    for sent in dev_text {
        if sent.is_empty() {
            continue;
        }
        let mut tokens: Vec<&str> = vec![SENT_BEGIN];
        tokens.extend(sent.iter().map(String::as_str));
        tokens.push(SENT_END);
        for i in 1..tokens.len() {
            let lo = i.saturating_sub(2);
            token_probs.push(
                components
                    .iter()
                    .map(|m| m.prob(&tokens[lo..i], tokens[i]).max(f64::MIN_POSITIVE))
                    .collect(),
            );
        }
    }
    if token_probs.is_empty() {
        return Err(LmError::EmptyDev);
    }
    let n = token_probs.len() as f64;
    let mut weights = vec![1.0 / k as f64; k];
    let mean_ll = |w: &[f64]| -> f64 {
        token_probs
            .iter()
            .map(|ps| {
                ps.iter()
                    .zip(w)
                    .map(|(p, l)| p * l)
                    .sum::<f64>()
                    .max(f64::MIN_POSITIVE)
                    .ln()
            })
            .sum::<f64>()
            / n
    };
    let mut trace = vec![mean_ll(&weights)];
    for _ in 0..max_iters {
        let mut resp_sum = vec![0.0; k];
        for ps in &token_probs {
            let mix: f64 = ps.iter().zip(&weights).map(|(p, l)| p * l).sum();
            for (r, (p, l)) in resp_sum.iter_mut().zip(ps.iter().zip(&weights)) {
                *r += p * l / mix.max(f64::MIN_POSITIVE);
            }
        }
        for (w, r) in weights.iter_mut().zip(&resp_sum) {
            *w = r / n;
        }
        let ll = mean_ll(&weights);
        let gain = ll - trace.last().unwrap();
        trace.push(ll);
        if gain < tol {
            break;
        }
    }
    Ok(FitResult {
        weights,
        ll_trace: trace,
    })
}

fn log10p(p: f64) -> f64 {
    if p <= f64::MIN_POSITIVE {
        -99.0
    } else {
        p.log10()
    }
}

/// Standard ARPA text format, log10 probabilities. Backoff weights are
/// written on the context's lower-order line.
pub fn write_arpa(model: &NGramModel, path: &Path) -> Result<(), LmError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "\\data\\")?;
    writeln!(w, "ngram 1={}", model.vocab.len())?;
    writeln!(w, "ngram 2={}", model.p2.len())?;
    writeln!(w, "ngram 3={}", model.p3.len())?;
    writeln!(w)?;
    writeln!(w, "\\1-grams:")?;
    for (i, tok) in model.vocab.iter().enumerate() {
        let bow = model.bow1.get(&(i as u32)).copied().unwrap_or(1.0);
        writeln!(
            w,
            "{:.6}\t{}\t{:.6}",
            log10p(model.p1[i]),
            tok,
            log10p(bow)
        )?;
    }
    writeln!(w)?;
    writeln!(w, "\\2-grams:")?;
    for ((v, u), p) in &model.p2 {
        let bow = model.bow2.get(&(*v, *u)).copied().unwrap_or(1.0);
        writeln!(
            w,
            "{:.6}\t{} {}\t{:.6}",
            log10p(*p),
            model.vocab[*v as usize],
            model.vocab[*u as usize],
            log10p(bow)
        )?;
    }
    writeln!(w)?;
    writeln!(w, "\\3-grams:")?;
    for ((u, v, x), p) in &model.p3 {
        writeln!(
            w,
            "{:.6}\t{} {} {}",
            log10p(*p),
            model.vocab[*u as usize],
            model.vocab[*v as usize],
            model.vocab[*x as usize]
        )?;
    }
    writeln!(w)?;
    writeln!(w, "\\end\\")?;
    Ok(())
}

pub fn read_arpa(path: &Path) -> Result<NGramModel, LmError> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    let mut declared: [Option<usize>; 3] = [None, None, None];
    let mut i = 0usize;
    let err = |line: usize, msg: &str| LmError::Parse {
        line: line + 1,
        msg: msg.to_string(),
    };
    // \data\ header
    while i < lines.len() && lines[i].trim() != "\\data\\" {
        if !lines[i].trim().is_empty() {
            return Err(err(i, "expected \\data\\ header"));
        }
        i += 1;
    }
    if i == lines.len() {
        return Err(err(0, "missing \\data\\ header"));
    }
    i += 1;
    while i < lines.len() {
        let line = lines[i].trim();
        if line.is_empty() {
            i += 1;
            continue;
        }
        if line.starts_with("\\") {
            break;
        }
        let rest = line
            .strip_prefix("ngram ")
            .ok_or_else(|| err(i, "expected ngram count"))?;
        let (order, count) = rest
            .split_once('=')
            .ok_or_else(|| err(i, "expected ngram N=count"))?;
        let order: usize = order.trim().parse().map_err(|_| err(i, "bad order"))?;
        let count: usize = count.trim().parse().map_err(|_| err(i, "bad count"))?;
        if !(1..=3).contains(&order) {
            return Err(err(i, "order outside 1..=3"));
        }
        declared[order - 1] = Some(count);
        i += 1;
    }

    struct RawEntry {
        words: Vec<String>,
        logp: f64,
        logbow: Option<f64>,
    }
    let mut sections: [Vec<RawEntry>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    while i < lines.len() {
        let header = lines[i].trim();
        if header.is_empty() {
            i += 1;
            continue;
        }
        if header == "\\end\\" {
            break;
        }
        let order = match header {
            "\\1-grams:" => 1usize,
            "\\2-grams:" => 2,
            "\\3-grams:" => 3,
            _ => return Err(err(i, "unknown section header")),
        };
        i += 1;
        while i < lines.len() {
            let line = lines[i].trim();
            if line.is_empty() {
                i += 1;
                continue;
            }
            if line.starts_with("\\") {
                break;
            }
            let mut parts = line.split('\t');
            let logp: f64 = parts
                .next()
                .and_then(|p| p.trim().parse().ok())
                .ok_or_else(|| err(i, "bad log probability"))?;
            let words: Vec<String> = parts
                .next()
                .ok_or_else(|| err(i, "missing n-gram tokens"))?
                .split_whitespace()
                .map(str::to_string)
                .collect();
            if words.len() != order {
                return Err(err(i, &format!("expected {order} tokens")));
            }
            let logbow = match parts.next() {
                Some(b) => Some(b.trim().parse().map_err(|_| err(i, "bad backoff"))?),
                None => None,
            };
            sections[order - 1].push(RawEntry {
                words,
                logp,
                logbow,
            });
            i += 1;
        }
    }
    for order in 0..3 {
        if let Some(want) = declared[order] {
            if sections[order].len() != want {
                return Err(LmError::CountMismatch {
                    section: format!("{}-grams", order + 1),
                    declared: want,
                    found: sections[order].len(),
                });
            }
        }
    }
    if sections[0].is_empty() {
        return Err(err(0, "no unigram section"));
    }

    let vocab: Vec<String> = sections[0].iter().map(|e| e.words[0].clone()).collect();
    let index: HashMap<String, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let lookup = |w: &str, line_hint: usize| -> Result<u32, LmError> {
        index
            .get(w)
            .copied()
            .ok_or_else(|| err(line_hint, &format!("token {w:?} not in unigram section")))
    };
    let mut p1 = vec![0.0; vocab.len()];
    let mut bow1 = BTreeMap::new();
    for (k, e) in sections[0].iter().enumerate() {
        p1[k] = 10f64.powf(e.logp);
        if let Some(b) = e.logbow {
            if b != 0.0 {
                bow1.insert(k as u32, 10f64.powf(b));
            }
        }
    }
    let mut p2 = BTreeMap::new();
    let mut bow2 = BTreeMap::new();
    for e in &sections[1] {
        let v = lookup(&e.words[0], 0)?;
        let u = lookup(&e.words[1], 0)?;
        p2.insert((v, u), 10f64.powf(e.logp));
        if let Some(b) = e.logbow {
            if b != 0.0 {
                bow2.insert((v, u), 10f64.powf(b));
            }
        }
    }
    let mut p3 = BTreeMap::new();
    for e in &sections[2] {
        let a = lookup(&e.words[0], 0)?;
        let b = lookup(&e.words[1], 0)?;
        let c = lookup(&e.words[2], 0)?;
        p3.insert((a, b, c), 10f64.powf(e.logp));
    }
    Ok(NGramModel {
        vocab,
        index,
        p1,
        bow1,
        p2,
        bow2,
        p3,
    })
}
