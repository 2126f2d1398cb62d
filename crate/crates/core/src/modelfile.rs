//! Plain-text persistence of posterior samples.
//!
//! ```text
//! parbart-model <version>
//! m <trees> d <inputs> draws <N>
//! scale <center> <range> <numcut>
//! var <lo> <hi> <k> <cut_1> ... <cut_k> <name>     (d lines)
//! draw <sigma>                                     (N blocks)
//! tree <nodes>                                     (m per draw)
//! <node lines>
//! end
//! ```
//!
//! Reals are written in shortest round-trip form, so loading is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::analysis::{Draw, PosteriorSample};
use crate::tree::{CutpointGrid, Tree, TreeError};

pub const MODEL_VERSION: u32 = 1;
const MAGIC: &str = "parbart-model";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model format version {found} is not supported (expected {MODEL_VERSION})")]
    Version { found: String },
    #[error("model declares {expected} {what} but contains {found}")]
    Count { what: &'static str, expected: usize, found: usize },
    #[error("model file ends early at line {line}")]
    Truncated { line: usize },
    #[error("model line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("cannot save an empty posterior sample")]
    Empty,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn to_text(s: &PosteriorSample) -> Result<String, ModelError> {
    if s.draws.is_empty() {
        return Err(ModelError::Empty);
    }
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {MODEL_VERSION}");
    let _ = writeln!(out, "m {} d {} draws {}", s.m(), s.d(), s.draws.len());
    let _ = writeln!(out, "scale {} {} {}", s.center, s.range, s.numcut);
    for v in 0..s.d() {
        let (lo, hi) = s.domain.get(v).copied().unwrap_or((f64::NAN, f64::NAN));
        let cuts = s.grid.cuts(v);
        let _ = write!(out, "var {lo} {hi} {}", cuts.len());
        for c in cuts {
            let _ = write!(out, " {c}");
        }
        let name = s.names.get(v).map_or("", String::as_str);
        let _ = writeln!(out, " {name}");
    }
    for d in &s.draws {
        let _ = writeln!(out, "draw {}", d.sigma);
        for t in &d.forest {
            let lines = t.to_lines();
            let _ = writeln!(out, "tree {}", lines.len());
            for l in lines {
                out.push_str(&l);
                out.push('\n');
            }
        }
    }
    out.push_str("end\n");
    Ok(out)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    /// Next line with its 1-based number, or a truncation error.
    fn next(&mut self) -> Result<(usize, &'a str), ModelError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l))
            }
            None => Err(ModelError::Truncated { line: self.last + 1 }),
        }
    }
}

fn parse<T: std::str::FromStr>(line: usize, field: Option<&str>, what: &str) -> Result<T, ModelError> {
    field.and_then(|f| f.parse().ok()).ok_or_else(|| ModelError::Parse {
        line,
        reason: format!("bad {what}"),
    })
}

fn keyword<'a>(line: usize, text: &'a str, key: &str) -> Result<std::str::SplitWhitespace<'a>, ModelError> {
    let mut f = text.split_whitespace();
    if f.next() != Some(key) {
        return Err(ModelError::Parse {
            line,
            reason: format!("expected `{key}`"),
        });
    }
    Ok(f)
}

pub fn from_text(text: &str) -> Result<PosteriorSample, ModelError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (ln, head) = lines.next()?;
    let mut f = keyword(ln, head, MAGIC)?;
    let version = f.next().unwrap_or("");
    if version != MODEL_VERSION.to_string() {
        return Err(ModelError::Version { found: version.to_string() });
    }

    let (ln, dims) = lines.next()?;
    let f: Vec<&str> = dims.split_whitespace().collect();
    if f.len() != 6 || f[0] != "m" || f[2] != "d" || f[4] != "draws" {
        return Err(ModelError::Parse {
            line: ln,
            reason: "expected `m <m> d <d> draws <N>`".into(),
        });
    }
    let m: usize = parse(ln, Some(f[1]), "m")?;
    let d: usize = parse(ln, Some(f[3]), "d")?;
    let n_draws: usize = parse(ln, Some(f[5]), "draws")?;

    let (ln, sc) = lines.next()?;
    let mut f = keyword(ln, sc, "scale")?;
    let center: f64 = parse(ln, f.next(), "center")?;
    let range: f64 = parse(ln, f.next(), "range")?;
    let numcut: usize = parse(ln, f.next(), "numcut")?;

    let mut names = Vec::with_capacity(d);
    let mut domain = Vec::with_capacity(d);
    let mut cuts = Vec::with_capacity(d);
    for _ in 0..d {
        let (ln, text) = lines.next()?;
        let mut f = keyword(ln, text, "var")?;
        let lo: f64 = parse(ln, f.next(), "lower bound")?;
        let hi: f64 = parse(ln, f.next(), "upper bound")?;
        let k: usize = parse(ln, f.next(), "cutpoint count")?;
        let c = (0..k).map(|_| parse(ln, f.next(), "cutpoint")).collect::<Result<Vec<f64>, _>>()?;
        names.push(f.collect::<Vec<_>>().join(" "));
        domain.push((lo, hi));
        cuts.push(c);
    }
    let grid = CutpointGrid::new(cuts)?;

    let mut draws = Vec::with_capacity(n_draws);
    let (mut ln, mut text) = lines.next()?;
    while text.starts_with("draw") {
        if draws.len() == n_draws {
            return Err(ModelError::Count {
                what: "draws",
                expected: n_draws,
                found: n_draws + 1 + text_count(&mut lines, "draw "),
            });
        }
        let sigma: f64 = parse(ln, keyword(ln, text, "draw")?.next(), "sigma")?;
        let mut forest = Vec::with_capacity(m);
        loop {
            (ln, text) = lines.next()?;
            if !text.starts_with("tree") {
                break;
            }
            let nodes: usize = parse(ln, keyword(ln, text, "tree")?.next(), "node count")?;
            let body = (0..nodes).map(|_| lines.next().map(|l| l.1)).collect::<Result<Vec<_>, _>>()?;
            let tree = Tree::from_lines(&body, ln + 1)?;
            tree.validate(&grid)?;
            forest.push(tree);
        }
        if forest.len() != m {
            return Err(ModelError::Count {
                what: "trees per draw",
                expected: m,
                found: forest.len(),
            });
        }
        draws.push(Draw { sigma, forest });
    }
    if text.trim() != "end" {
        return Err(ModelError::Parse {
            line: ln,
            reason: "expected `draw` or `end`".into(),
        });
    }
    if draws.len() != n_draws {
        return Err(ModelError::Count {
            what: "draws",
            expected: n_draws,
            found: draws.len(),
        });
    }
    if n_draws == 0 {
        return Err(ModelError::Empty);
    }
    Ok(PosteriorSample {
        names,
        center,
        range,
        numcut,
        grid,
        domain,
        draws,
    })
}

/// Counts remaining lines starting with `prefix` (for error reports).
fn text_count(lines: &mut Lines, prefix: &str) -> usize {
    let mut k = 0;
    while let Ok((_, l)) = lines.next() {
        if l.starts_with(prefix) {
            k += 1;
        }
    }
    k
}

pub fn save_model(path: &Path, s: &PosteriorSample) -> Result<(), ModelError> {
    fs::write(path, to_text(s)?).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<PosteriorSample, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_serial, FitConfig};
    use crate::Dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_fit() -> PosteriorSample {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.chunks(2).map(|r| r[0] * 3.0 + r[1].powi(2) + 0.1 * rng.random::<f64>()).collect();
        let data = Dataset::from_rows(2, x, y).unwrap();
        let cfg = FitConfig { m: 5, draws: 30, burn: 20, seed: 4, ..Default::default() };
        fit_serial(&data, &cfg).unwrap().sample
    }

    #[test]
    fn round_trip_predicts_identically() {
        let s = small_fit();
        assert_eq!(s.draws.len(), 10);
        let back = from_text(&to_text(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.5..1.5)).collect();
        let a = s.predict_mean(&x).unwrap();
        let b = back.predict_mean(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn distinct_errors() {
        let text = to_text(&small_fit()).unwrap();
        let cut = &text[..text.len() / 2];
        let cut = &cut[..cut.rfind('\n').unwrap() + 1];
        assert!(matches!(from_text(cut), Err(ModelError::Truncated { .. })));
        let v2 = text.replacen("parbart-model 1", "parbart-model 2", 1);
        assert!(matches!(from_text(&v2), Err(ModelError::Version { .. })));
        let fewer = text.replacen("draws 10", "draws 9", 1);
        assert!(matches!(from_text(&fewer), Err(ModelError::Count { what: "draws", expected: 9, found: 10 })));
        let more = text.replacen("draws 10", "draws 11", 1);
        assert!(matches!(from_text(&more), Err(ModelError::Count { what: "draws", .. })));
        let trees = text.replacen("m 5 ", "m 6 ", 1);
        assert!(matches!(from_text(&trees), Err(ModelError::Count { what: "trees per draw", .. })));
    }

    #[test]
    fn names_with_spaces_survive() {
        let mut s = small_fit();
        s.names = vec!["first input".into(), "x2".into()];
        assert_eq!(from_text(&to_text(&s).unwrap()).unwrap().names, s.names);
    }

    #[test]
    fn large_model_counts() {
        let mut s = small_fit();
        let forest: Vec<Tree> = (0..200).map(|j| s.draws[0].forest[j % 5].clone()).collect();
        s.draws = (0..400).map(|i| Draw { sigma: 0.1 + i as f64, forest: forest.clone() }).collect();
        let back = from_text(&to_text(&s).unwrap()).unwrap();
        assert_eq!((back.draws.len(), back.m()), (400, 200));
    }
}
