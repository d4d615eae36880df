use std::path::{Path, PathBuf};

/// Paths inside a pipeline work directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkDir {
    root: PathBuf,
}

impl WorkDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn partitions_dir(&self) -> PathBuf {
        self.root.join("partitions")
    }

    pub fn manifest(&self) -> PathBuf {
        self.partitions_dir().join("manifest.json")
    }

    pub fn partition_fasta(&self, i: u32) -> PathBuf {
        self.partitions_dir().join(format!("part_{i}.fa"))
    }

    pub fn index_dir(&self) -> PathBuf {
        self.root.join("index")
    }

    pub fn index(&self, i: u32) -> PathBuf {
        self.index_dir().join(format!("part_{i}.idx"))
    }

    pub fn bloom_dir(&self) -> PathBuf {
        self.root.join("bloom")
    }

    pub fn bloom(&self, file_name: &str) -> PathBuf {
        self.bloom_dir().join(file_name)
    }

    pub fn input_dir(&self) -> PathBuf {
        self.root.join("input")
    }

    pub fn sealed_input(&self) -> PathBuf {
        self.input_dir().join("reads.fq.sealed")
    }

    pub fn dispatched_dir(&self) -> PathBuf {
        self.root.join("dispatched")
    }

    pub fn dispatched(&self, i: u32) -> PathBuf {
        self.dispatched_dir().join(format!("part_{i}.fq.sealed"))
    }

    pub fn sam_dir(&self) -> PathBuf {
        self.root.join("sam")
    }

    pub fn sam(&self, i: u32) -> PathBuf {
        self.sam_dir().join(format!("part_{i}.sam.sealed"))
    }

    pub fn final_dir(&self) -> PathBuf {
        self.root.join("final")
    }

    pub fn final_output(&self) -> PathBuf {
        self.final_dir().join("output.sam.sealed")
    }

    /// Scratch space for plaintext handed to an external aligner.
    pub fn scratch_dir(&self) -> PathBuf {
        self.root.join("tmp")
    }

    /// Directories whose every file must be sealed.
    pub fn protected_dirs(&self) -> [PathBuf; 4] {
        [self.input_dir(), self.dispatched_dir(), self.sam_dir(), self.final_dir()]
    }
}
