//! Plain-text network and evidence files.
//!
//! Networks use the UAI `BAYES` layout:
//!
//! ```text
//! BAYES
//! <n>
//! <domain sizes>
//! <number of functions>
//! <scope size> <vars...>      one line per function, child last for CPTs
//! <table size>                then the probabilities, last variable fastest
//! <values...>
//! ```
//!
//! Evidence files hold the number of observations followed by
//! `variable value` pairs.

use std::fs;
use std::path::Path;

use crate::model::{Evidence, Factor, Network, NORMALIZATION_TOLERANCE};

use super::HarnessError;

/// Rows this close to summing to one are rescaled on read.
const RENORMALIZE_SLACK: f64 = 1e-3;

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    next: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text.lines().enumerate().flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t))).collect();
        Tokens { items, next: 0 }
    }

    fn line(&self) -> usize {
        self.items.get(self.next).or(self.items.last()).map_or(1, |&(l, _)| l)
    }

    fn word(&mut self, what: &str) -> Result<(usize, &'a str), HarnessError> {
        let t = self.items.get(self.next).copied().ok_or_else(|| HarnessError::Parse {
            line: self.line(),
            message: format!("unexpected end of file, expected {what}"),
        })?;
        self.next += 1;
        Ok(t)
    }

    fn int(&mut self, what: &str) -> Result<(usize, usize), HarnessError> {
        let (line, t) = self.word(what)?;
        t.parse()
            .map(|v| (line, v))
            .map_err(|_| HarnessError::Parse { line, message: format!("expected {what}, found {t:?}") })
    }

    fn real(&mut self, what: &str) -> Result<(usize, f64), HarnessError> {
        let (line, t) = self.word(what)?;
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok((line, v)),
            _ => Err(HarnessError::Parse { line, message: format!("expected {what}, found {t:?}") }),
        }
    }

    fn finish(&self) -> Result<(), HarnessError> {
        match self.items.get(self.next) {
            Some(&(line, t)) => Err(HarnessError::Parse { line, message: format!("trailing token {t:?}") }),
            None => Ok(()),
        }
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Parse { line, message: message.into() }
}

/// Parses a network from UAI `BAYES` text.
///
/// A function becomes the CPT of its last scope variable if that variable
/// has no CPT yet; every other function is kept as an extra factor.
pub fn parse_network(text: &str) -> Result<Network, HarnessError> {
    let mut tk = Tokens::new(text);
    let (line, header) = tk.word("the BAYES header")?;
    if header != "BAYES" {
        return Err(parse_error(line, format!("expected BAYES header, found {header:?}")));
    }
    let (_, n) = tk.int("the variable count")?;
    let mut domains = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, d) = tk.int("a domain size")?;
        if d == 0 {
            return Err(parse_error(line, "domain sizes must be positive"));
        }
        domains.push(d);
    }
    let (_, nf) = tk.int("the function count")?;
    let mut scopes = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, len) = tk.int("a scope size")?;
        let mut scope = Vec::with_capacity(len);
        for _ in 0..len {
            let (_, v) = tk.int("a variable index")?;
            if v >= n {
                return Err(parse_error(line, format!("variable {v} out of range")));
            }
            if scope.contains(&v) {
                return Err(parse_error(line, format!("variable {v} repeated in scope")));
            }
            scope.push(v);
        }
        scopes.push((line, scope));
    }
    let mut cpt_of: Vec<Option<Factor>> = vec![None; n];
    let mut extra = Vec::new();
    for (_, scope) in &scopes {
        let (line, size) = tk.int("a table size")?;
        let dims: Vec<usize> = scope.iter().map(|&v| domains[v]).collect();
        let expected: usize = dims.iter().product();
        if size != expected {
            return Err(parse_error(line, format!("table size {size} does not match scope ({expected} entries)")));
        }
        let mut probs = Vec::with_capacity(size);
        for _ in 0..size {
            probs.push(tk.real("a probability")?.1);
        }
        let child = scope.last().copied();
        match child {
            Some(c) if cpt_of[c].is_none() => {
                renormalize(&mut probs, domains[c]);
                let f = Factor::from_probabilities(scope.clone(), dims, &probs)
                    .map_err(|e| parse_error(line, e.to_string()))?;
                cpt_of[c] = Some(f);
            }
            _ => {
                let f = Factor::from_probabilities(scope.clone(), dims, &probs)
                    .map_err(|e| parse_error(line, e.to_string()))?;
                extra.push(f);
            }
        }
    }
    tk.finish()?;
    let last = tk.line();
    let cpts = cpt_of
        .into_iter()
        .enumerate()
        .map(|(v, f)| f.ok_or_else(|| parse_error(last, format!("variable {v} has no CPT"))))
        .collect::<Result<Vec<_>, _>>()?;
    Network::with_extra_factors(domains, cpts, extra).map_err(|e| parse_error(last, e.to_string()))
}

fn renormalize(probs: &mut [f64], k: usize) {
    for row in probs.chunks_mut(k) {
        let sum: f64 = row.iter().sum();
        let off = (sum - 1.0).abs();
        if off > NORMALIZATION_TOLERANCE && off < RENORMALIZE_SLACK {
            row.iter_mut().for_each(|p| *p /= sum);
        }
    }
}

/// UAI text for `net`; CPTs first in variable order, then extra factors.
pub fn format_network(net: &Network) -> String {
    let mut out = String::from("BAYES\n");
    out.push_str(&format!("{}\n", net.num_vars()));
    out.push_str(&join(net.domains().iter()));
    out.push('\n');
    out.push_str(&format!("{}\n", net.factors().len()));
    for f in net.factors() {
        out.push_str(&format!("{} {}\n", f.scope().len(), join(f.scope().iter())));
    }
    for f in net.factors() {
        out.push_str(&format!("\n{}\n", f.len()));
        let probs: Vec<f64> = f.values().iter().map(|v| v.exp()).collect();
        let width = f.dims().last().copied().unwrap_or(1).max(1);
        for row in probs.chunks(width) {
            out.push(' ');
            out.push_str(&join(row.iter()));
            out.push('\n');
        }
    }
    out
}

fn join<T: std::fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn read_network(path: impl AsRef<Path>) -> Result<Network, HarnessError> {
    parse_network(&read(path.as_ref())?)
}

pub fn write_network(net: &Network, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    write(path.as_ref(), &format_network(net))
}

/// Parses evidence, checking every pair against `net`.
pub fn parse_evidence(text: &str, net: &Network) -> Result<Evidence, HarnessError> {
    let mut tk = Tokens::new(text);
    let mut ev = Evidence::new();
    if tk.items.is_empty() {
        return Ok(ev);
    }
    let (_, count) = tk.int("the evidence count")?;
    for _ in 0..count {
        let (line, v) = tk.int("a variable index")?;
        let (_, x) = tk.int("a value")?;
        if v >= net.num_vars() {
            return Err(parse_error(line, format!("variable {v} out of range")));
        }
        if x >= net.domain(v) {
            return Err(parse_error(line, format!("value {x} outside the domain of variable {v}")));
        }
        if ev.contains(v) {
            return Err(parse_error(line, format!("variable {v} observed twice")));
        }
        ev.insert(v, x);
    }
    tk.finish()?;
    Ok(ev)
}

pub fn format_evidence(ev: &Evidence) -> String {
    let mut out = format!("{}\n", ev.len());
    for (v, x) in ev.iter() {
        out.push_str(&format!("{v} {x}\n"));
    }
    out
}

pub fn read_evidence(path: impl AsRef<Path>, net: &Network) -> Result<Evidence, HarnessError> {
    parse_evidence(&read(path.as_ref())?, net)
}

pub fn write_evidence(ev: &Evidence, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    write(path.as_ref(), &format_evidence(ev))
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })
}
