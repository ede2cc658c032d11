use crate::error::{Error, Result};

/// One encoded vector: a full-codebook index per subspace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompactCode(Vec<u16>);

impl CompactCode {
    pub fn new(indexes: Vec<u16>) -> Self {
        CompactCode(indexes)
    }

    pub fn indexes(&self) -> &[u16] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Storage width of one sub-quantizer index. Indexes of `b <= 8` bit
/// quantizers are stored in bytes, up to 16 bits in `u16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeWidth {
    U8,
    U16,
}

impl CodeWidth {
    pub fn for_bits(bits: u32) -> Self {
        if bits <= 8 {
            CodeWidth::U8
        } else {
            CodeWidth::U16
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            CodeWidth::U8 => 8,
            CodeWidth::U16 => 16,
        }
    }
}

/// A sub-quantizer index as stored in a [`CodeStore`].
pub trait CodeWord: Copy + Send + Sync + 'static {
    fn index(self) -> usize;
}

impl CodeWord for u8 {
    #[inline(always)]
    fn index(self) -> usize {
        self as usize
    }
}

impl CodeWord for u16 {
    #[inline(always)]
    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeWords {
    U8(Vec<u8>),
    U16(Vec<u16>),
}

/// Contiguous array of compact codes, `m` words per code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeStore {
    m: usize,
    words: CodeWords,
}

impl CodeStore {
    pub fn new(m: usize, width: CodeWidth) -> Self {
        let words = match width {
            CodeWidth::U8 => CodeWords::U8(Vec::new()),
            CodeWidth::U16 => CodeWords::U16(Vec::new()),
        };
        CodeStore { m, words }
    }

    pub fn from_words(m: usize, words: CodeWords) -> Result<Self> {
        let len = match &words {
            CodeWords::U8(w) => w.len(),
            CodeWords::U16(w) => w.len(),
        };
        if m == 0 || len % m != 0 {
            return Err(Error::domain(format!(
                "{len} words do not form codes of length {m}"
            )));
        }
        Ok(CodeStore { m, words })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn width(&self) -> CodeWidth {
        match self.words {
            CodeWords::U8(_) => CodeWidth::U8,
            CodeWords::U16(_) => CodeWidth::U16,
        }
    }

    pub fn words(&self) -> &CodeWords {
        &self.words
    }

    pub fn len(&self) -> usize {
        match &self.words {
            CodeWords::U8(w) => w.len() / self.m,
            CodeWords::U16(w) => w.len() / self.m,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, code: &CompactCode) -> Result<()> {
        if code.len() != self.m {
            return Err(Error::domain(format!(
                "code of length {} pushed into store of length {}",
                code.len(),
                self.m
            )));
        }
        match &mut self.words {
            CodeWords::U8(w) => {
                for &i in code.indexes() {
                    let byte = u8::try_from(i)
                        .map_err(|_| Error::domain(format!("index {i} does not fit 8 bits")))?;
                    w.push(byte);
                }
            }
            CodeWords::U16(w) => w.extend_from_slice(code.indexes()),
        }
        Ok(())
    }

    pub fn get(&self, i: usize) -> CompactCode {
        let range = i * self.m..(i + 1) * self.m;
        CompactCode(match &self.words {
            CodeWords::U8(w) => w[range].iter().map(|&v| u16::from(v)).collect(),
            CodeWords::U16(w) => w[range].to_vec(),
        })
    }

    /// A store holding the first `n` codes.
    pub fn head(&self, n: usize) -> CodeStore {
        let end = n.min(self.len()) * self.m;
        let words = match &self.words {
            CodeWords::U8(w) => CodeWords::U8(w[..end].to_vec()),
            CodeWords::U16(w) => CodeWords::U16(w[..end].to_vec()),
        };
        CodeStore { m: self.m, words }
    }
}
