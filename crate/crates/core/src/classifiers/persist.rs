//! Versioned plain-text model files. Floats are written with `{:?}`, which
//! round-trips every f64 exactly, so reloaded models predict bit-identically.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::{
    DecisionTree, FittedModel, ForestConfig, LogisticModel, NetParams, NeuralNet, RandomForest, Standardizer,
    TreeNode,
};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "debtmine-model";

fn put_floats(out: &mut String, key: &str, v: &[f64]) {
    let _ = write!(out, "{key} {}", v.len());
    for x in v {
        let _ = write!(out, " {x:?}");
    }
    out.push('\n');
}

fn put_matrix(out: &mut String, key: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{key} {} {}", m.nrows(), m.ncols());
    for r in m.row_iter() {
        let row: Vec<String> = r.iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn put_names(out: &mut String, key: &str, names: &[String]) {
    let _ = writeln!(out, "{key} {}", names.len());
    for n in names {
        let _ = writeln!(out, "{n}");
    }
}

pub fn save_model(model: &FittedModel) -> String {
    let mut out = format!("{MAGIC} {MODEL_FORMAT_VERSION}\nfamily {}\n", model.family());
    put_names(&mut out, "features", model.feature_names());
    put_names(&mut out, "classes", model.class_names());
    match model {
        FittedModel::Lr(m) => {
            let _ = writeln!(out, "l2 {:?}\nconverged {}\niterations {}", m.l2, m.converged, m.iterations);
            put_floats(&mut out, "means", &m.standardizer.means);
            put_floats(&mut out, "sds", &m.standardizer.sds);
            put_matrix(&mut out, "coefficients", &m.coefficients);
            put_floats(&mut out, "loss_history", &m.loss_history);
        }
        FittedModel::Forest(f) => {
            let c = &f.config;
            let mtry = c.mtry.map_or("auto".to_string(), |m| m.to_string());
            let oob = f.oob_accuracy.map_or("none".to_string(), |a| format!("{a:?}"));
            let _ = writeln!(
                out,
                "n_trees {}\nmtry {mtry}\nmin_leaf {}\nbootstrap {}\noob {oob}",
                c.n_trees, c.min_leaf, c.bootstrap
            );
            for t in &f.trees {
                let _ = writeln!(out, "tree {}", t.nodes.len());
                for n in &t.nodes {
                    match n {
                        TreeNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            let _ = writeln!(out, "split {feature} {threshold:?} {left} {right}");
                        }
                        TreeNode::Leaf { class } => {
                            let _ = writeln!(out, "leaf {class}");
                        }
                    }
                }
                put_floats(&mut out, "importance", &t.importance);
            }
        }
        FittedModel::Net(n) => {
            let _ = writeln!(
                out,
                "hidden {}\nbest_loss {:?}\nbest_epoch {}\nepochs_run {}",
                n.hidden, n.best_loss, n.best_epoch, n.epochs_run
            );
            put_floats(&mut out, "means", &n.standardizer.means);
            put_floats(&mut out, "sds", &n.standardizer.sds);
            put_matrix(&mut out, "w1", &n.params.w1);
            put_floats(&mut out, "b1", n.params.b1.as_slice());
            put_matrix(&mut out, "w2", &n.params.w2);
            put_floats(&mut out, "b2", n.params.b2.as_slice());
        }
    }
    out.push_str("end\n");
    out
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn err(line: usize, msg: impl std::fmt::Display) -> Error {
        Error::load(format!("model line {}", line + 1), msg.to_string())
    }

    fn line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .ok_or_else(|| Error::load("model file", "unexpected end of file"))
    }

    /// Next line must start with `key`; returns the remaining fields.
    fn key(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (no, line) = self.line()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return Err(Self::err(no, format!("expected `{key}`, found `{line}`")));
        }
        Ok((no, parts.collect()))
    }

    fn value<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let (no, rest) = self.key(key)?;
        match rest.as_slice() {
            [v] => parse(no, v),
            _ => Err(Self::err(no, format!("`{key}` takes one value"))),
        }
    }

    fn names(&mut self, key: &str) -> Result<Vec<String>> {
        let n: usize = self.value(key)?;
        (0..n).map(|_| self.line().map(|(_, l)| l.to_string())).collect()
    }

    fn floats(&mut self, key: &str) -> Result<Vec<f64>> {
        let (no, rest) = self.key(key)?;
        let n: usize = parse(no, rest.first().copied().unwrap_or(""))?;
        if rest.len() != n + 1 {
            return Err(Self::err(no, format!("`{key}` declares {n} values, has {}", rest.len() - 1)));
        }
        rest[1..].iter().map(|v| parse(no, v)).collect()
    }

    fn matrix(&mut self, key: &str) -> Result<DMatrix<f64>> {
        let (no, rest) = self.key(key)?;
        let [r, c] = rest.as_slice() else {
            return Err(Self::err(no, format!("`{key}` needs rows and columns")));
        };
        let (r, c): (usize, usize) = (parse(no, r)?, parse(no, c)?);
        let mut m = DMatrix::zeros(r, c);
        for i in 0..r {
            let (no, line) = self.line()?;
            let vals: Vec<f64> = line.split(' ').filter(|s| !s.is_empty()).map(|v| parse(no, v)).collect::<Result<_>>()?;
            if vals.len() != c {
                return Err(Self::err(no, format!("expected {c} values, found {}", vals.len())));
            }
            for (j, v) in vals.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }
}

fn parse<T: FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Reader::err(line, format!("cannot parse `{s}`")))
}

pub fn load_model(text: &str) -> Result<FittedModel> {
    let mut r = Reader {
        lines: text.lines().enumerate(),
    };
    let version: u32 = r.value(MAGIC)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::load(
            "model header",
            format!("unsupported format version {version} (expected {MODEL_FORMAT_VERSION})"),
        ));
    }
    let family: String = r.value("family")?;
    let feature_names = r.names("features")?;
    let class_names = r.names("classes")?;
    let model = match family.as_str() {
        "multinomial-lr" => {
            let l2 = r.value("l2")?;
            let converged = r.value("converged")?;
            let iterations = r.value("iterations")?;
            let standardizer = Standardizer {
                means: r.floats("means")?,
                sds: r.floats("sds")?,
            };
            FittedModel::Lr(LogisticModel {
                feature_names,
                class_names,
                standardizer,
                coefficients: r.matrix("coefficients")?,
                l2,
                converged,
                iterations,
                loss_history: r.floats("loss_history")?,
            })
        }
        "random-forest" => {
            let n_trees: usize = r.value("n_trees")?;
            let mtry: String = r.value("mtry")?;
            let mtry = if mtry == "auto" {
                None
            } else {
                Some(parse(0, &mtry)?)
            };
            let min_leaf = r.value("min_leaf")?;
            let bootstrap = r.value("bootstrap")?;
            let oob: String = r.value("oob")?;
            let oob_accuracy = if oob == "none" { None } else { Some(parse(0, &oob)?) };
            let mut trees = Vec::with_capacity(n_trees);
            for _ in 0..n_trees {
                let n_nodes: usize = r.value("tree")?;
                let mut nodes = Vec::with_capacity(n_nodes);
                for _ in 0..n_nodes {
                    let (no, line) = r.line()?;
                    let f: Vec<&str> = line.split(' ').collect();
                    let node = match f.as_slice() {
                        ["split", a, b, c, d] => TreeNode::Split {
                            feature: parse(no, a)?,
                            threshold: parse(no, b)?,
                            left: parse(no, c)?,
                            right: parse(no, d)?,
                        },
                        ["leaf", k] => TreeNode::Leaf { class: parse(no, k)? },
                        _ => return Err(Reader::err(no, format!("bad tree node `{line}`"))),
                    };
                    nodes.push(node);
                }
                trees.push(DecisionTree {
                    nodes,
                    importance: r.floats("importance")?,
                });
            }
            FittedModel::Forest(RandomForest {
                feature_names,
                class_names,
                config: ForestConfig {
                    n_trees,
                    mtry,
                    min_leaf,
                    bootstrap,
                },
                trees,
                oob_accuracy,
            })
        }
        "neural-net" => {
            let hidden = r.value("hidden")?;
            let best_loss = r.value("best_loss")?;
            let best_epoch = r.value("best_epoch")?;
            let epochs_run = r.value("epochs_run")?;
            let standardizer = Standardizer {
                means: r.floats("means")?,
                sds: r.floats("sds")?,
            };
            let w1 = r.matrix("w1")?;
            let b1 = DVector::from_vec(r.floats("b1")?);
            let w2 = r.matrix("w2")?;
            let b2 = DVector::from_vec(r.floats("b2")?);
            FittedModel::Net(NeuralNet {
                feature_names,
                class_names,
                standardizer,
                params: NetParams { w1, b1, w2, b2 },
                hidden,
                best_loss,
                best_epoch,
                epochs_run,
            })
        }
        other => return Err(Error::load("model header", format!("unknown model family `{other}`"))),
    };
    r.key("end")?;
    check_shapes(&model)?;
    Ok(model)
}

fn check_shapes(model: &FittedModel) -> Result<()> {
    let d = model.feature_names().len();
    let c = model.class_names().len();
    let ok = match model {
        FittedModel::Lr(m) => {
            m.coefficients.shape() == (c - 1, d + 1) && m.standardizer.means.len() == d && m.standardizer.sds.len() == d
        }
        FittedModel::Forest(f) => f.trees.iter().all(|t| {
            t.importance.len() == d
                && t.nodes.iter().all(|n| match n {
                    TreeNode::Split { feature, left, right, .. } => {
                        *feature < d && *left < t.nodes.len() && *right < t.nodes.len()
                    }
                    TreeNode::Leaf { class } => *class < c,
                })
        }),
        FittedModel::Net(n) => {
            let h = n.hidden;
            n.params.w1.shape() == (h, d)
                && n.params.b1.len() == h
                && n.params.w2.shape() == (c, h)
                && n.params.b2.len() == c
                && n.standardizer.means.len() == d
        }
    };
    if ok && c >= 2 {
        Ok(())
    } else {
        Err(Error::load("model file", "parameter shapes do not match the feature and class lists"))
    }
}
