use serde::{Deserialize, Serialize};

use super::LegoError;
use crate::groups::GroupSpec;

/// Size of the symbol library. Single letters `a..z`.
pub const DEFAULT_SYMBOLS: usize = 26;

/// Token table: group elements, then symbols, then `=`, `∘`, `;`, `<pad>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    tokens: Vec<String>,
    num_elements: usize,
    num_symbols: usize,
}

pub const ASSIGN: &str = "=";
pub const APPLY: &str = "∘";
pub const SEP: &str = ";";
pub const PAD: &str = "<pad>";

fn symbol_name(k: usize) -> String {
    if k < 26 {
        ((b'a' + k as u8) as char).to_string()
    } else {
        format!("v{k}")
    }
}

impl VocabSpec {
    pub fn new(group: &GroupSpec, num_symbols: usize) -> Self {
        let mut tokens: Vec<String> = group.elements().iter().map(|e| e.name.clone()).collect();
        tokens.extend((0..num_symbols).map(symbol_name));
        tokens.extend([ASSIGN, APPLY, SEP, PAD].map(String::from));
        Self { tokens, num_elements: group.order(), num_symbols }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn num_symbols(&self) -> usize {
        self.num_symbols
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn element(&self, id: usize) -> u32 {
        id as u32
    }

    pub fn symbol(&self, k: usize) -> u32 {
        (self.num_elements + k) as u32
    }

    pub fn assign(&self) -> u32 {
        (self.num_elements + self.num_symbols) as u32
    }

    pub fn apply(&self) -> u32 {
        self.assign() + 1
    }

    pub fn sep(&self) -> u32 {
        self.assign() + 2
    }

    pub fn pad(&self) -> u32 {
        self.assign() + 3
    }

    /// Element id if `token` is an element token.
    pub fn as_element(&self, token: u32) -> Option<usize> {
        ((token as usize) < self.num_elements).then_some(token as usize)
    }

    /// Symbol index if `token` is a symbol token.
    pub fn as_symbol(&self, token: u32) -> Option<usize> {
        let t = token as usize;
        (t >= self.num_elements && t < self.num_elements + self.num_symbols).then(|| t - self.num_elements)
    }

    pub fn name(&self, token: u32) -> Result<&str, LegoError> {
        self.tokens.get(token as usize).map(String::as_str).ok_or(LegoError::UnknownTokenId(token))
    }

    pub fn id(&self, name: &str) -> Result<u32, LegoError> {
        self.tokens
            .iter()
            .position(|t| t == name)
            .map(|p| p as u32)
            .ok_or_else(|| LegoError::UnknownToken(name.to_string()))
    }

    pub fn symbol_name(&self, k: usize) -> String {
        symbol_name(k)
    }

    pub fn symbol_index(&self, name: &str) -> Result<usize, LegoError> {
        self.as_symbol(self.id(name)?).ok_or_else(|| LegoError::UnknownToken(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::build_dihedral;

    #[test]
    fn ids_are_contiguous_and_unique() {
        let v = VocabSpec::new(&build_dihedral(3).unwrap(), DEFAULT_SYMBOLS);
        assert_eq!(v.len(), 6 + 26 + 4);
        let mut names = v.tokens().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), v.len());
        assert_eq!(v.name(v.symbol(0)).unwrap(), "a");
        assert_eq!(v.name(v.pad()).unwrap(), PAD);
        assert_eq!(v.as_symbol(v.symbol(25)), Some(25));
        assert_eq!(v.as_element(v.symbol(0)), None);
    }
}
