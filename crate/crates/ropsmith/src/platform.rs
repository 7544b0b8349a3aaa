//! Platform calling conventions: syscall numbers and argument register
//! order. Numbers come from a JSON table (a copy for linux-x86_64 ships with
//! the crate), never from source constants.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regs::Reg;

const LINUX_X86_64_TABLE: &str = include_str!("../config/syscalls_linux_x86_64.json");

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("i/o error reading syscall table: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed syscall table: {0}")]
    Parse(String),
    #[error("unknown syscall name {0:?}")]
    UnknownSyscall(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub name: String,
    pub syscall_number_reg: Reg,
    pub arg_regs: Vec<Reg>,
    pub syscall_numbers: BTreeMap<String, u64>,
}

impl Platform {
    /// The bundled linux-x86_64 table.
    pub fn linux_x86_64() -> Platform {
        serde_json::from_str(LINUX_X86_64_TABLE).expect("bundled syscall table parses")
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Platform, PlatformError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PlatformError::Parse(e.to_string()))
    }

    pub fn syscall_number(&self, name: &str) -> Result<u64, PlatformError> {
        self.syscall_numbers
            .get(name)
            .copied()
            .ok_or_else(|| PlatformError::UnknownSyscall(name.to_string()))
    }
}

impl Default for Platform {
    fn default() -> Self {
        Platform::linux_x86_64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table() {
        let p = Platform::linux_x86_64();
        assert_eq!(p.syscall_number("execve").unwrap(), 59);
        assert_eq!(p.syscall_number_reg, Reg::Rax);
        assert_eq!(
            p.arg_regs,
            vec![Reg::Rdi, Reg::Rsi, Reg::Rdx, Reg::Rcx, Reg::R8, Reg::R9]
        );
        assert!(p.syscall_number("no_such_call").is_err());
    }
}
