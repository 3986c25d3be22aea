//! Named constellation sources.
//!
//! Built-in names resolve either to a Cartesian-product generator or to a
//! data file bundled with the crate. Setting `CM4D_DATA_DIR` makes bundled
//! names prefer `<dir>/<file>` when that file exists.

use std::path::PathBuf;

use crate::constellation::{make_cartesian, Constellation, PamAlphabet};
use crate::error::{Error, Result};

pub const DATA_DIR_ENV: &str = "CM4D_DATA_DIR";

/// Something that can produce a constellation by name.
pub trait ConstellationSource: Send + Sync {
    fn name(&self) -> &str;
    fn describe(&self) -> String;
    fn build(&self) -> Result<Constellation>;
}

struct Cartesian {
    name: &'static str,
    pam_order: usize,
    dims: usize,
}

impl ConstellationSource for Cartesian {
    fn name(&self) -> &str {
        self.name
    }

    fn describe(&self) -> String {
        format!(
            "Gray-labeled Cartesian product of {} copies of {}-PAM",
            self.dims, self.pam_order
        )
    }

    fn build(&self) -> Result<Constellation> {
        Ok(make_cartesian(&PamAlphabet::new(self.pam_order)?, self.dims)?.with_name(self.name))
    }
}

struct Bundled {
    name: &'static str,
    file: &'static str,
    text: &'static str,
}

impl ConstellationSource for Bundled {
    fn name(&self) -> &str {
        self.name
    }

    fn describe(&self) -> String {
        format!("bundled data file constellations/{}", self.file)
    }

    fn build(&self) -> Result<Constellation> {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let path = PathBuf::from(dir).join(self.file);
            if path.is_file() {
                return Ok(Constellation::load(&path)?.with_name(self.name));
            }
        }
        Constellation::parse(self.text, self.name, self.file)
    }
}

/// Registry of constellation sources, looked up by name.
pub struct ConstellationRegistry {
    sources: Vec<Box<dyn ConstellationSource>>,
}

impl Default for ConstellationRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ConstellationRegistry {
    pub fn empty() -> Self {
        ConstellationRegistry {
            sources: Vec::new(),
        }
    }

    /// PM-QPSK, PM-16QAM, C4,16, SO-PM-QPSK and C4,256.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Cartesian {
            name: "pm-qpsk",
            pam_order: 2,
            dims: 4,
        }));
        r.register(Box::new(Cartesian {
            name: "pm-16qam",
            pam_order: 4,
            dims: 4,
        }));
        r.register(Box::new(Bundled {
            name: "c4_16",
            file: "c4_16.txt",
            text: include_str!("../../../constellations/c4_16.txt"),
        }));
        r.register(Box::new(Bundled {
            name: "so-pm-qpsk",
            file: "so_pm_qpsk.txt",
            text: include_str!("../../../constellations/so_pm_qpsk.txt"),
        }));
        r.register(Box::new(Bundled {
            name: "c4_256",
            file: "c4_256.txt",
            text: include_str!("../../../constellations/c4_256.txt"),
        }));
        r
    }

    /// Adds a source; a later registration with the same name wins.
    pub fn register(&mut self, source: Box<dyn ConstellationSource>) {
        self.sources.retain(|s| s.name() != source.name());
        self.sources.push(source);
    }

    pub fn names(&self) -> Vec<&str> {
        self.sources.iter().map(|s| s.name()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&dyn ConstellationSource> {
        let key = canonical(name);
        self.sources
            .iter()
            .find(|s| canonical(s.name()) == key)
            .map(|s| s.as_ref())
    }

    pub fn build(&self, name: &str) -> Result<Constellation> {
        self.get(name)
            .ok_or_else(|| Error::UnknownName {
                kind: "constellation",
                name: name.to_string(),
                available: self.names().join(", "),
            })?
            .build()
    }
}

// `so_pm_qpsk`, `SO-PM-QPSK` and `so-pm-qpsk` all name the same source.
fn canonical(name: &str) -> String {
    name.to_ascii_lowercase().replace('_', "-")
}
