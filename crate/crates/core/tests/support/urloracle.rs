//! Independent URL-authority oracle and corpus generator shared by the
//! differential and acceptance test binaries.
#![allow(dead_code)]

#[derive(Debug, Clone, PartialEq)]
pub enum OracleKind {
    Dns,
    V4,
    V6,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAuthority {
    pub userinfo: Option<String>,
    pub host: String,
    pub kind: OracleKind,
    pub port: Option<u16>,
}

pub fn is_reg_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_' | '~')
}

pub fn is_strict_quad(host: &str) -> bool {
    let parts: Vec<&str> = host.split('.').collect();
    parts.len() == 4
        && parts.iter().all(|p| {
            !p.is_empty()
                && p.bytes().all(|b| b.is_ascii_digit())
                && (p.len() == 1 || !p.starts_with('0'))
                && p.parse::<u32>().map(|v| v <= 255).unwrap_or(false)
        })
}

/// Forward single-pass authority parser. Returns None for anything outside
/// the grammar.
pub fn oracle_parse(url: &str) -> Option<OracleAuthority> {
    let rest = url
        .strip_prefix("https://")
        .or_else(|| url.strip_prefix("http://"))?;
    let end = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    let authority = &rest[..end];

    #[derive(Clone, Copy, PartialEq)]
    enum State {
        HostStart,
        RegName,
        InBracket,
        AfterBracket,
        Port,
    }

    let mut state = State::HostStart;
    let mut userinfo: Option<String> = None;
    let mut consumed = String::new();
    let mut host = String::new();
    let mut port_digits = String::new();
    let mut bracketed = false;
    let mut saw_port_colon = false;
    let mut pending_invalid = false;

    for c in authority.chars() {
        if c == '@' {
            let merged = match userinfo.take() {
                Some(prev) => format!("{prev}@{consumed}"),
                None => consumed.clone(),
            };
            userinfo = Some(merged);
            consumed.clear();
            host.clear();
            port_digits.clear();
            bracketed = false;
            saw_port_colon = false;
            pending_invalid = false;
            state = State::HostStart;
            continue;
        }
        consumed.push(c);
        match state {
            State::HostStart => match c {
                '[' => {
                    bracketed = true;
                    state = State::InBracket;
                }
                ':' => {
                    saw_port_colon = true;
                    state = State::Port;
                }
                c if is_reg_char(c) => {
                    host.push(c.to_ascii_lowercase());
                    state = State::RegName;
                }
                _ => pending_invalid = true,
            },
            State::RegName => match c {
                ':' => {
                    saw_port_colon = true;
                    state = State::Port;
                }
                c if is_reg_char(c) => host.push(c.to_ascii_lowercase()),
                _ => pending_invalid = true,
            },
            State::InBracket => {
                if c == ']' {
                    state = State::AfterBracket;
                } else {
                    host.push(c.to_ascii_lowercase());
                }
            }
            State::AfterBracket => {
                if c == ':' {
                    saw_port_colon = true;
                    state = State::Port;
                } else {
                    pending_invalid = true;
                }
            }
            State::Port => {
                if c.is_ascii_digit() {
                    port_digits.push(c);
                } else {
                    pending_invalid = true;
                }
            }
        }
    }

    if pending_invalid || host.is_empty() {
        return None;
    }
    if bracketed && state == State::InBracket {
        return None; // unclosed bracket
    }
    let port = if port_digits.is_empty() {
        let _ = saw_port_colon; // a bare trailing ':' is an empty port
        None
    } else {
        match port_digits.parse::<u32>() {
            Ok(v) if v <= 65535 => Some(v as u16),
            _ => return None,
        }
    };
    let kind = if bracketed {
        if host.parse::<std::net::Ipv6Addr>().is_err() {
            return None;
        }
        OracleKind::V6
    } else if is_strict_quad(&host) {
        OracleKind::V4
    } else {
        if host.split('.').any(str::is_empty) {
            return None;
        }
        OracleKind::Dns
    };
    Some(OracleAuthority {
        userinfo,
        host,
        kind,
        port,
    })
}

/// The oracle's own allowlist judgment under default policy settings:
/// http/https only, userinfo forbidden, IP hosts forbidden, label-boundary
/// suffix matching.
pub fn oracle_allows(url: &str, allowlist: &[&str]) -> bool {
    let Some(auth) = oracle_parse(url) else {
        return false;
    };
    if auth.userinfo.is_some() || auth.kind != OracleKind::Dns {
        return false;
    }
    let host_labels: Vec<&str> = auth.host.split('.').collect();
    allowlist.iter().any(|pattern| {
        let pat_labels: Vec<&str> = pattern.split('.').collect();
        host_labels == pat_labels
            || (host_labels.len() > pat_labels.len()
                && host_labels[host_labels.len() - pat_labels.len()..] == pat_labels[..])
    })
}

/// Independent restatement of the first-colon-truncation matcher.
pub fn oracle_flawed_allows(url: &str, allowlist: &[&str]) -> bool {
    if allowlist.is_empty() {
        return true;
    }
    let Some((_, rest)) = url.split_once("://") else {
        return false;
    };
    let end = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    let netloc = &rest[..end];
    if netloc.contains('[') != netloc.contains(']') {
        return false;
    }
    let lowered = netloc.to_lowercase();
    let truncated = lowered.split(':').next().unwrap_or("");
    allowlist
        .iter()
        .any(|a| truncated == *a || truncated.ends_with(&format!(".{a}")))
}

pub fn generate_corpus() -> Vec<String> {
    let userinfos: [Option<&str>; 12] = [
        None,
        Some(""),
        Some("user"),
        Some("user:pass"),
        Some("example.com"),
        Some("example.com:pass"),
        Some("example.com:443"),
        Some("a@b"),
        Some("example.com:pass@x"),
        Some("evil.io"),
        Some("sub.example.com:x"),
        Some("user:p@ss:w"),
    ];
    let hosts = [
        "example.com",
        "sub.example.com",
        "localhost",
        "evil.io",
        "example.com.evil.io",
        "notexample.com",
        "EXAMPLE.COM",
        "127.0.0.1",
        "169.254.169.254",
        "[::1]",
        "[2001:db8::1]",
        "example.org",
        "a.example.com",
        "xn--bcher-kva.example",
        "999.1.2.3",
    ];
    let ports: [Option<&str>; 14] = [
        None,
        Some(""),
        Some("80"),
        Some("443"),
        Some("8080"),
        Some("65535"),
        Some("65536"),
        Some("99999"),
        Some("pass"),
        Some("0"),
        Some("08"),
        Some("8o8o"),
        Some("999999999999"),
        Some("1 2"),
    ];
    let paths = ["", "/", "/a/b?q=1", "#frag"];

    let mut corpus = Vec::new();
    for ui in userinfos {
        for host in hosts {
            for port in ports {
                for path in paths {
                    let mut url = String::from("https://");
                    if let Some(ui) = ui {
                        url.push_str(ui);
                        url.push('@');
                    }
                    url.push_str(host);
                    if let Some(port) = port {
                        url.push(':');
                        url.push_str(port);
                    }
                    url.push_str(path);
                    corpus.push(url);
                }
            }
        }
    }
    corpus
}

