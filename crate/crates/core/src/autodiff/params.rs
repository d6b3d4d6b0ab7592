use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Index;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Graph, Matrix, Var};
use crate::error::{Error, Result};

const MAGIC: &str = "NATCKPT 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameter matrices in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

/// Parameters of a store bound onto one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform Glorot initialisation.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let value = Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Matrix::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Places every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    g.param(v.clone())
                } else {
                    g.constant(v.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Gradient per parameter, zeros where nothing flowed.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients) -> Vec<Matrix> {
        self.values
            .iter()
            .zip(&bound.vars)
            .map(|(v, &var)| grads.take(var).unwrap_or_else(|| Matrix::zeros(v.dim())))
            .collect()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.names.iter().zip(&self.values) {
            h.update(name.as_bytes());
            h.update((v.nrows() as u64).to_le_bytes());
            h.update((v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes the header (names and shapes) followed by the raw values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.num_scalars() * 8 + 256);
        writeln!(buf, "{MAGIC}").unwrap();
        writeln!(buf, "{}", self.len()).unwrap();
        for (name, v) in self.names.iter().zip(&self.values) {
            writeln!(buf, "{} {} {}", name, v.nrows(), v.ncols()).unwrap();
        }
        for v in &self.values {
            for x in v.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        let mut read_line = |reader: &mut BufReader<fs::File>| -> Result<String> {
            line.clear();
            reader
                .read_line(&mut line)
                .map_err(|e| Error::io(path, e))?;
            Ok(line.trim_end().to_string())
        };
        if read_line(&mut reader)? != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let count: usize = read_line(&mut reader)?
            .parse()
            .map_err(|_| bad("bad parameter count".into()))?;
        let mut header = Vec::with_capacity(count);
        for _ in 0..count {
            let l = read_line(&mut reader)?;
            let parts: Vec<&str> = l.split(' ').collect();
            if parts.len() != 3 {
                return Err(bad(format!("bad header line {l:?}")));
            }
            let rows: usize = parts[1].parse().map_err(|_| bad(format!("bad rows in {l:?}")))?;
            let cols: usize = parts[2].parse().map_err(|_| bad(format!("bad cols in {l:?}")))?;
            header.push((parts[0].to_string(), rows, cols));
        }
        let mut store = ParamStore::new();
        let mut bytes = [0u8; 8];
        for (name, rows, cols) in header {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                reader
                    .read_exact(&mut bytes)
                    .map_err(|_| bad(format!("truncated data in {name}")))?;
                data.push(f64::from_le_bytes(bytes));
            }
            let m = Matrix::from_shape_vec((rows, cols), data).expect("length matches shape");
            store.add(name, m);
        }
        Ok(store)
    }

    /// Replaces values with those of `other`, which must have identical
    /// names and shapes.
    pub fn assign_from(&mut self, other: &ParamStore, path: &Path) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: "parameter names do not match the model".into(),
            });
        }
        for (name, (a, b)) in self.names.iter().zip(self.values.iter().zip(&other.values)) {
            if a.dim() != b.dim() {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    message: format!("shape of {name}: {:?} vs {:?}", a.dim(), b.dim()),
                });
            }
        }
        self.values.clone_from(&other.values);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.add_glorot("enc.w", 4, 7, &mut rng);
        store.add_zeros("enc.b", 1, 7);
        store.get_mut(ParamId(1))[[0, 3]] = -1.0 / 3.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        store.save(&path).unwrap();
        let back = ParamStore::load(&path).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.hash(), store.hash());
    }

    #[test]
    fn hash_changes_with_values() {
        let mut store = ParamStore::new();
        let id = store.add_zeros("w", 2, 2);
        let before = store.hash();
        store.get_mut(id)[[1, 1]] = 1e-300;
        assert_ne!(before, store.hash());
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut store = ParamStore::new();
        store.add_zeros("w", 3, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        store.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            ParamStore::load(&path),
            Err(Error::Checkpoint { .. })
        ));
    }
}
