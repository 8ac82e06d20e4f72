//! Intel-syntax operand parsing and canonical rendering.

use serde::{Deserialize, Serialize};

/// General-purpose registers normalized to their 64-bit family, plus rip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Reg {
    Rax,
    Rbx,
    Rcx,
    Rdx,
    Rsi,
    Rdi,
    Rbp,
    Rsp,
    R8,
    R9,
    R10,
    R11,
    R12,
    R13,
    R14,
    R15,
    Rip,
}

impl Reg {
    pub fn name(self) -> &'static str {
        self.name_for_width(64)
    }

    pub fn name_for_width(self, width: u8) -> &'static str {
        use Reg::*;
        match (self, width) {
            (Rax, 64) => "rax",
            (Rax, 32) => "eax",
            (Rax, 16) => "ax",
            (Rax, 8) => "al",
            (Rbx, 64) => "rbx",
            (Rbx, 32) => "ebx",
            (Rbx, 16) => "bx",
            (Rbx, 8) => "bl",
            (Rcx, 64) => "rcx",
            (Rcx, 32) => "ecx",
            (Rcx, 16) => "cx",
            (Rcx, 8) => "cl",
            (Rdx, 64) => "rdx",
            (Rdx, 32) => "edx",
            (Rdx, 16) => "dx",
            (Rdx, 8) => "dl",
            (Rsi, 64) => "rsi",
            (Rsi, 32) => "esi",
            (Rsi, 16) => "si",
            (Rsi, 8) => "sil",
            (Rdi, 64) => "rdi",
            (Rdi, 32) => "edi",
            (Rdi, 16) => "di",
            (Rdi, 8) => "dil",
            (Rbp, 64) => "rbp",
            (Rbp, 32) => "ebp",
            (Rbp, 16) => "bp",
            (Rbp, 8) => "bpl",
            (Rsp, 64) => "rsp",
            (Rsp, 32) => "esp",
            (Rsp, 16) => "sp",
            (Rsp, 8) => "spl",
            (R8, 64) => "r8",
            (R8, 32) => "r8d",
            (R8, 16) => "r8w",
            (R8, 8) => "r8b",
            (R9, 64) => "r9",
            (R9, 32) => "r9d",
            (R9, 16) => "r9w",
            (R9, 8) => "r9b",
            (R10, 64) => "r10",
            (R10, 32) => "r10d",
            (R10, 16) => "r10w",
            (R10, 8) => "r10b",
            (R11, 64) => "r11",
            (R11, 32) => "r11d",
            (R11, 16) => "r11w",
            (R11, 8) => "r11b",
            (R12, 64) => "r12",
            (R12, 32) => "r12d",
            (R12, 16) => "r12w",
            (R12, 8) => "r12b",
            (R13, 64) => "r13",
            (R13, 32) => "r13d",
            (R13, 16) => "r13w",
            (R13, 8) => "r13b",
            (R14, 64) => "r14",
            (R14, 32) => "r14d",
            (R14, 16) => "r14w",
            (R14, 8) => "r14b",
            (R15, 64) => "r15",
            (R15, 32) => "r15d",
            (R15, 16) => "r15w",
            (R15, 8) => "r15b",
            (Rip, _) => "rip",
            _ => "rax",
        }
    }
}

/// Look up a register name; returns the 64-bit family and the access width.
pub fn lookup_register(name: &str) -> Option<(Reg, u8)> {
    use Reg::*;
    let r = match name {
        "rax" => (Rax, 64),
        "eax" => (Rax, 32),
        "ax" => (Rax, 16),
        "al" | "ah" => (Rax, 8),
        "rbx" => (Rbx, 64),
        "ebx" => (Rbx, 32),
        "bx" => (Rbx, 16),
        "bl" | "bh" => (Rbx, 8),
        "rcx" => (Rcx, 64),
        "ecx" => (Rcx, 32),
        "cx" => (Rcx, 16),
        "cl" | "ch" => (Rcx, 8),
        "rdx" => (Rdx, 64),
        "edx" => (Rdx, 32),
        "dx" => (Rdx, 16),
        "dl" | "dh" => (Rdx, 8),
        "rsi" => (Rsi, 64),
        "esi" => (Rsi, 32),
        "si" => (Rsi, 16),
        "sil" => (Rsi, 8),
        "rdi" => (Rdi, 64),
        "edi" => (Rdi, 32),
        "di" => (Rdi, 16),
        "dil" => (Rdi, 8),
        "rbp" => (Rbp, 64),
        "ebp" => (Rbp, 32),
        "bp" => (Rbp, 16),
        "bpl" => (Rbp, 8),
        "rsp" => (Rsp, 64),
        "esp" => (Rsp, 32),
        "sp" => (Rsp, 16),
        "spl" => (Rsp, 8),
        "r8" => (R8, 64),
        "r8d" => (R8, 32),
        "r8w" => (R8, 16),
        "r8b" | "r8l" => (R8, 8),
        "r9" => (R9, 64),
        "r9d" => (R9, 32),
        "r9w" => (R9, 16),
        "r9b" | "r9l" => (R9, 8),
        "r10" => (R10, 64),
        "r10d" => (R10, 32),
        "r10w" => (R10, 16),
        "r10b" | "r10l" => (R10, 8),
        "r11" => (R11, 64),
        "r11d" => (R11, 32),
        "r11w" => (R11, 16),
        "r11b" | "r11l" => (R11, 8),
        "r12" => (R12, 64),
        "r12d" => (R12, 32),
        "r12w" => (R12, 16),
        "r12b" | "r12l" => (R12, 8),
        "r13" => (R13, 64),
        "r13d" => (R13, 32),
        "r13w" => (R13, 16),
        "r13b" | "r13l" => (R13, 8),
        "r14" => (R14, 64),
        "r14d" => (R14, 32),
        "r14w" => (R14, 16),
        "r14b" | "r14l" => (R14, 8),
        "r15" => (R15, 64),
        "r15d" => (R15, 32),
        "r15w" => (R15, 16),
        "r15b" | "r15l" => (R15, 8),
        "rip" | "eip" => (Rip, 64),
        _ => return None,
    };
    Some(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Cs,
    Ds,
    Es,
    Fs,
    Gs,
    Ss,
}

impl Segment {
    pub fn name(self) -> &'static str {
        match self {
            Segment::Cs => "cs",
            Segment::Ds => "ds",
            Segment::Es => "es",
            Segment::Fs => "fs",
            Segment::Gs => "gs",
            Segment::Ss => "ss",
        }
    }

    fn from_name(name: &str) -> Option<Segment> {
        Some(match name {
            "cs" => Segment::Cs,
            "ds" => Segment::Ds,
            "es" => Segment::Es,
            "fs" => Segment::Fs,
            "gs" => Segment::Gs,
            "ss" => Segment::Ss,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    Register {
        reg: Reg,
        /// Access width in bits: 8, 16, 32 or 64.
        width: u8,
    },
    Immediate(i64),
    Memory {
        base: Option<Reg>,
        index: Option<Reg>,
        scale: u8,
        disp: i64,
        segment: Option<Segment>,
    },
    Label {
        addr: u64,
        name: Option<String>,
    },
}

impl Operand {
    pub fn is_memory(&self) -> bool {
        matches!(self, Operand::Memory { .. })
    }

    pub fn is_register(&self) -> bool {
        matches!(self, Operand::Register { .. })
    }
}

/// Parse one Intel-syntax operand.
///
/// `code_target` switches bare numbers/symbols to labels (branch and call
/// operand positions). `bare_hex` treats un-prefixed numbers as hexadecimal,
/// matching how objdump prints branch targets.
pub fn parse_operand(text: &str, code_target: bool, bare_hex: bool) -> Result<Operand, String> {
    let mut s = text.trim();
    if s.is_empty() {
        return Err("empty operand".into());
    }

    // Trailing `<symbol>` / `<symbol+0x..>` annotation.
    let mut annotation: Option<String> = None;
    if let Some(open) = s.find('<') {
        if s.ends_with('>') {
            let inner = &s[open + 1..s.len() - 1];
            // `<sym+0x16>` marks an interior address, not the symbol itself.
            if !inner.contains('+') && !inner.is_empty() {
                annotation = Some(inner.to_string());
            }
            s = s[..open].trim();
        }
    }

    // Size keyword (`qword ptr` etc.) only qualifies the access; strip it.
    let lower = s.to_ascii_lowercase();
    let mut rest = lower.as_str();
    for size in [
        "byte", "word", "dword", "qword", "tbyte", "oword", "xmmword", "ymmword", "zmmword",
    ] {
        if let Some(tail) = rest.strip_prefix(size) {
            if tail.starts_with(' ') || tail.starts_with('[') {
                rest = tail.trim_start();
                rest = rest.strip_prefix("ptr").unwrap_or(rest).trim_start();
                break;
            }
        }
    }

    // Segment override: `fs:[..]`, `ds:0x601040`.
    let mut segment = None;
    if rest.len() > 3 && rest.as_bytes()[2] == b':' {
        if let Some(seg) = Segment::from_name(&rest[..2]) {
            segment = Some(seg);
            rest = &rest[3..];
        }
    }

    if rest.starts_with('[') {
        if !rest.ends_with(']') {
            return Err(format!("unterminated memory operand `{text}`"));
        }
        return parse_memory(&rest[1..rest.len() - 1], segment);
    }

    if segment.is_some() {
        // objdump absolute form `ds:0x601040`.
        let disp = parse_number(rest, bare_hex).ok_or_else(|| {
            format!("expected absolute address after segment in `{text}`")
        })?;
        return Ok(Operand::Memory {
            base: None,
            index: None,
            scale: 1,
            disp,
            segment,
        });
    }

    if let Some((reg, width)) = lookup_register(rest) {
        return Ok(Operand::Register { reg, width });
    }

    if let Some(value) = parse_number(rest, bare_hex && code_target) {
        if code_target {
            return Ok(Operand::Label {
                addr: value as u64,
                name: annotation,
            });
        }
        return Ok(Operand::Immediate(value));
    }

    if rest
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '@')
    {
        // A symbol we cannot resolve locally; address 0 until the program
        // post-pass maps it onto a known function entry. Symbol names are
        // case-sensitive, so take them from the unlowered text.
        let original = if s.len() == rest.len() { s } else { rest };
        return Ok(Operand::Label {
            addr: 0,
            name: Some(annotation.unwrap_or_else(|| original.to_string())),
        });
    }

    Err(format!("unparseable operand `{text}`"))
}

fn parse_number(s: &str, bare_hex: bool) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let value = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()? as i64
    } else if bare_hex {
        if !body.chars().all(|c| c.is_ascii_hexdigit()) || body.is_empty() {
            return None;
        }
        u64::from_str_radix(body, 16).ok()? as i64
    } else {
        // u64 first so the full i64 range round-trips (-2^63 included)
        body.parse::<u64>().ok()? as i64
    };
    Some(if neg { value.wrapping_neg() } else { value })
}

fn parse_memory(inner: &str, segment: Option<Segment>) -> Result<Operand, String> {
    let mut base: Option<Reg> = None;
    let mut index: Option<Reg> = None;
    let mut scale: u8 = 1;
    let mut disp: i64 = 0;
    let mut saw_disp = false;

    // Split `rax+rbx*4-0x8` into signed terms.
    let mut terms: Vec<(bool, String)> = Vec::new();
    let mut current = String::new();
    let mut sign = false;
    for c in inner.chars() {
        match c {
            '+' | '-' if !current.trim().is_empty() => {
                terms.push((sign, current.trim().to_string()));
                current = String::new();
                sign = c == '-';
            }
            '-' if current.trim().is_empty() => sign = true,
            _ => current.push(c),
        }
    }
    if !current.trim().is_empty() {
        terms.push((sign, current.trim().to_string()));
    }
    if terms.is_empty() {
        return Err("memory operand needs a base, index or displacement".into());
    }

    for (negative, term) in terms {
        if let Some((lhs, rhs)) = term.split_once('*') {
            let (reg_text, scale_text) = if lookup_register(lhs.trim()).is_some() {
                (lhs.trim(), rhs.trim())
            } else {
                (rhs.trim(), lhs.trim())
            };
            let (reg, _) = lookup_register(reg_text)
                .ok_or_else(|| format!("unknown index register `{reg_text}`"))?;
            let s: u8 = scale_text
                .parse()
                .map_err(|_| format!("bad scale `{scale_text}`"))?;
            if ![1, 2, 4, 8].contains(&s) {
                return Err(format!("scale must be 1, 2, 4 or 8, got {s}"));
            }
            if negative {
                return Err("negative index term in memory operand".into());
            }
            if index.is_some() {
                return Err("two index registers in memory operand".into());
            }
            index = Some(reg);
            scale = s;
        } else if let Some((reg, _)) = lookup_register(&term) {
            if negative {
                return Err("negative register term in memory operand".into());
            }
            if base.is_none() {
                base = Some(reg);
            } else if index.is_none() {
                index = Some(reg);
                scale = 1;
            } else {
                return Err("three registers in memory operand".into());
            }
        } else if let Some(v) = parse_number(&term, false) {
            disp = disp.wrapping_add(if negative { v.wrapping_neg() } else { v });
            saw_disp = true;
        } else {
            return Err(format!("bad memory term `{term}`"));
        }
    }

    if base.is_none() && index.is_none() && !saw_disp {
        return Err("memory operand needs a base, index or displacement".into());
    }
    Ok(Operand::Memory {
        base,
        index,
        scale,
        disp,
        segment,
    })
}

/// Canonical Intel-syntax rendering; `parse_operand` round-trips it.
pub fn render_operand(op: &Operand) -> String {
    match op {
        Operand::Register { reg, width } => reg.name_for_width(*width).to_string(),
        Operand::Immediate(v) => format!("{v}"),
        Operand::Memory {
            base,
            index,
            scale,
            disp,
            segment,
        } => {
            let mut out = String::new();
            if let Some(seg) = segment {
                out.push_str(seg.name());
                out.push(':');
            }
            out.push('[');
            let mut wrote = false;
            if let Some(b) = base {
                out.push_str(b.name());
                wrote = true;
            }
            if let Some(i) = index {
                if wrote {
                    out.push('+');
                }
                out.push_str(i.name());
                if *scale != 1 {
                    out.push('*');
                    out.push_str(&scale.to_string());
                }
                wrote = true;
            }
            if *disp != 0 || !wrote {
                if *disp < 0 {
                    out.push_str(&format!("-0x{:x}", disp.unsigned_abs()));
                } else {
                    if wrote {
                        out.push('+');
                    }
                    out.push_str(&format!("0x{disp:x}"));
                }
            }
            out.push(']');
            out
        }
        Operand::Label { addr, name } => match (addr, name) {
            (0, Some(n)) => n.clone(),
            (a, Some(n)) => format!("0x{a:x} <{n}>"),
            (a, None) => format!("0x{a:x}"),
        },
    }
}
