//! Progress lines on standard error.

use std::io::IsTerminal;

/// Color only on a terminal and only when `NO_COLOR` is unset or empty.
pub fn use_color() -> bool {
    let disabled = std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty());
    !disabled && std::io::stderr().is_terminal()
}

pub fn format_note(msg: &str, color: bool) -> String {
    if color {
        format!("\x1b[1;36mimu-align\x1b[0m {msg}")
    } else {
        format!("imu-align {msg}")
    }
}

pub fn note(msg: &str) {
    eprintln!("{}", format_note(msg, use_color()));
}
