//! Portable text checkpoints.
//!
//! Layout: a header with family, dims, seed and training-step count, then
//! one block per named parameter matrix with its shape and row-major
//! values. Values use shortest-round-trip decimal so a load is
//! value-exact on any platform.
//!
//! ```text
//! diffstack-checkpoint v1
//! family diffstk-rnn
//! dims 5 8 3
//! seed 42
//! steps 180
//! param U 8 5
//! 0.1 -0.25 ...
//! ...
//! end
//! ```

use crate::cells::{Dims, Family, Model};
use crate::math::{Matrix, RngStream};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

const MAGIC: &str = "diffstack-checkpoint v1";

pub fn checkpoint_to_text(model: &Model, seed: u64, steps: u64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "family {}", model.family);
    let _ = writeln!(
        s,
        "dims {} {} {}",
        model.dims.vocab, model.dims.hidden, model.dims.read_width
    );
    let _ = writeln!(s, "seed {seed}");
    let _ = writeln!(s, "steps {steps}");
    for id in model.store.ids() {
        let m = model.store.value(id);
        let _ = writeln!(s, "param {} {} {}", model.store.name(id), m.rows(), m.cols());
        for r in 0..m.rows() {
            let row: Vec<String> = (0..m.cols()).map(|c| format!("{:?}", m.get(r, c))).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
    }
    s.push_str("end\n");
    s
}

pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub steps: u64,
}

pub fn checkpoint_from_text(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines();
    let bad = |what: &str| Error::Io(format!("checkpoint: {what}"));
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing magic line"));
    }
    let field = |line: Option<&str>, key: &str| -> Result<String> {
        line.and_then(|l| l.strip_prefix(key))
            .and_then(|v| v.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected '{key}' line")))
    };
    let family = Family::from_str(&field(lines.next(), "family")?)?;
    let dims_line = field(lines.next(), "dims")?;
    let dims: Vec<usize> = dims_line
        .split(' ')
        .map(|v| v.parse().map_err(|_| bad(&format!("bad dims '{dims_line}'"))))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(bad(&format!("bad dims '{dims_line}'")));
    }
    let dims = Dims {
        vocab: dims[0],
        hidden: dims[1],
        read_width: dims[2],
    };
    let seed: u64 = field(lines.next(), "seed")?
        .parse()
        .map_err(|_| bad("bad seed"))?;
    let steps: u64 = field(lines.next(), "steps")?
        .parse()
        .map_err(|_| bad("bad steps"))?;

    // build the parameter skeleton for the family, then overwrite values
    let mut rng = RngStream::new(seed);
    let mut model = Model::new(family, dims, &mut rng);
    let mut seen: std::collections::HashSet<String> = std::collections::HashSet::new();

    loop {
        let line = lines.next().ok_or_else(|| bad("missing 'end'"))?;
        if line == "end" {
            break;
        }
        let rest = line
            .strip_prefix("param ")
            .ok_or_else(|| bad(&format!("expected param block, got '{line}'")))?;
        let mut parts = rest.split(' ');
        let name = parts.next().ok_or_else(|| bad("param without name"))?;
        let rows: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(&format!("param {name}: bad rows")))?;
        let cols: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(&format!("param {name}: bad cols")))?;
        let id = model
            .store
            .id(name)
            .ok_or_else(|| bad(&format!("family {family} has no parameter '{name}'")))?;
        let have = model.store.value(id);
        if have.rows() != rows || have.cols() != cols {
            return Err(bad(&format!(
                "param {name}: shape {rows}x{cols} does not match {}x{}",
                have.rows(),
                have.cols()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = lines
                .next()
                .ok_or_else(|| bad(&format!("param {name}: missing row {r}")))?;
            for v in row.split(' ') {
                let x: f64 = v
                    .parse()
                    .map_err(|_| bad(&format!("param {name}: bad value '{v}'")))?;
                data.push(x);
            }
            if data.len() != (r + 1) * cols {
                return Err(bad(&format!("param {name}: row {r} has wrong width")));
            }
        }
        *model.store.value_mut(id) = Matrix::from_vec(rows, cols, data)?;
        seen.insert(name.to_string());
    }

    for id in model.store.ids().collect::<Vec<_>>() {
        if !seen.contains(model.store.name(id)) {
            return Err(bad(&format!(
                "missing parameter '{}' for family {family}",
                model.store.name(id)
            )));
        }
    }
    Ok(Checkpoint { model, seed, steps })
}

pub fn write_checkpoint(path: &Path, model: &Model, seed: u64, steps: u64) -> Result<()> {
    std::fs::write(path, checkpoint_to_text(model, seed, steps))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    checkpoint_from_text(&text)
}

/// One-paragraph human summary (the `inspect` command).
pub fn summarize(ck: &Checkpoint) -> String {
    let n_params = ck.model.store.num_scalars();
    format!(
        "family {} | vocab {} hidden {} read {} | seed {} | steps {} | {} parameters in {} tensors",
        ck.model.family,
        ck.model.dims.vocab,
        ck.model.dims.hidden,
        ck.model.dims.read_width,
        ck.seed,
        ck.steps,
        n_params,
        ck.model.store.len()
    )
}
