use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The six prediction tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskId {
    Lba,
    Ppa,
    Ec,
    Mf,
    Bp,
    Cc,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [Self::Lba, Self::Ppa, Self::Ec, Self::Mf, Self::Bp, Self::Cc];
    pub const AFFINITY: [TaskId; 2] = [Self::Lba, Self::Ppa];
    pub const PROPERTY: [TaskId; 4] = [Self::Ec, Self::Mf, Self::Bp, Self::Cc];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Lba => "lba",
            Self::Ppa => "ppa",
            Self::Ec => "ec",
            Self::Mf => "mf",
            Self::Bp => "bp",
            Self::Cc => "cc",
        }
    }

    pub fn is_affinity(self) -> bool {
        matches!(self, Self::Lba | Self::Ppa)
    }

    /// Position among the four property tasks.
    pub fn property_index(self) -> Option<usize> {
        (!self.is_affinity()).then(|| self.index() - 2)
    }

    /// Parses a comma-separated list such as `lba,ppa,ec`.
    pub fn parse_list(s: &str) -> Result<Vec<TaskId>, String> {
        let mut out: Vec<TaskId> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let t: TaskId = part.parse()?;
            if !out.contains(&t) {
                out.push(t);
            }
        }
        if out.is_empty() {
            return Err("empty task list".into());
        }
        out.sort();
        Ok(out)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let s = s.strip_prefix("go-").unwrap_or(&s);
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task {s:?} (expected lba, ppa, ec, mf, bp or cc)"))
    }
}

impl Serialize for TaskId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Number of classes of each property task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelDims {
    pub ec: usize,
    pub mf: usize,
    pub bp: usize,
    pub cc: usize,
}

impl Default for LabelDims {
    fn default() -> Self {
        Self {
            ec: 538,
            mf: 490,
            bp: 1944,
            cc: 321,
        }
    }
}

impl LabelDims {
    pub fn uniform(n: usize) -> Self {
        Self {
            ec: n,
            mf: n,
            bp: n,
            cc: n,
        }
    }

    /// Output width of a task head (1 for affinity tasks).
    pub fn dim(&self, task: TaskId) -> usize {
        match task {
            TaskId::Lba | TaskId::Ppa => 1,
            TaskId::Ec => self.ec,
            TaskId::Mf => self.mf,
            TaskId::Bp => self.bp,
            TaskId::Cc => self.cc,
        }
    }

    /// Parses `ec=8,mf=8,bp=8,cc=8` (missing keys keep their defaults) or a
    /// single number applied to all four.
    pub fn parse(s: &str) -> Result<Self, String> {
        if let Ok(n) = s.trim().parse::<usize>() {
            return Self::uniform(n).validated();
        }
        let mut dims = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected task=dim, got {part:?}"))?;
            let v: usize = v.trim().parse().map_err(|_| format!("bad dimension in {part:?}"))?;
            match k.trim().parse::<TaskId>()? {
                TaskId::Ec => dims.ec = v,
                TaskId::Mf => dims.mf = v,
                TaskId::Bp => dims.bp = v,
                TaskId::Cc => dims.cc = v,
                t => return Err(format!("{t} has no label dimension")),
            }
        }
        dims.validated()
    }

    pub fn validated(self) -> Result<Self, String> {
        if [self.ec, self.mf, self.bp, self.cc].contains(&0) {
            return Err("label dimensions must be positive".into());
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_names_and_indices() {
        for (i, t) in TaskId::ALL.iter().enumerate() {
            assert_eq!(t.index(), i);
            assert_eq!(t.name().parse::<TaskId>().unwrap(), *t);
        }
        assert_eq!("GO-MF".parse::<TaskId>().unwrap(), TaskId::Mf);
        assert_eq!(TaskId::Bp.property_index(), Some(2));
        assert_eq!(TaskId::Ppa.property_index(), None);
        assert_eq!(
            TaskId::parse_list("ec, lba,ppa,ec").unwrap(),
            vec![TaskId::Lba, TaskId::Ppa, TaskId::Ec]
        );
    }

    #[test]
    fn label_dims() {
        let d = LabelDims::default();
        assert_eq!((d.ec, d.mf, d.bp, d.cc), (538, 490, 1944, 321));
        assert_eq!(LabelDims::parse("8").unwrap(), LabelDims::uniform(8));
        let p = LabelDims::parse("ec=4,cc=2").unwrap();
        assert_eq!((p.ec, p.mf, p.cc), (4, 490, 2));
        assert!(LabelDims::parse("lba=3").is_err());
        assert!(LabelDims::parse("0").is_err());
    }
}
