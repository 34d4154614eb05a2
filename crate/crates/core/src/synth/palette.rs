//! Named hues and the category naming scheme for the synthetic corpus.

/// 12 named hues at 30-degree spacing.
pub const HUE_NAMES: [(&str, f32); 12] = [
    ("red", 0.0),
    ("orange", 30.0),
    ("yellow", 60.0),
    ("chartreuse", 90.0),
    ("green", 120.0),
    ("spring", 150.0),
    ("cyan", 180.0),
    ("azure", 210.0),
    ("blue", 240.0),
    ("violet", 270.0),
    ("magenta", 300.0),
    ("rose", 330.0),
];

/// Synonyms resolving to the same hue as a palette name; used to exercise the
/// retrieval-alias path.
pub const HUE_SYNONYMS: [(&str, &str); 12] = [
    ("crimson", "red"),
    ("tangerine", "orange"),
    ("gold", "yellow"),
    ("lime", "chartreuse"),
    ("emerald", "green"),
    ("mint", "spring"),
    ("teal", "cyan"),
    ("sky", "azure"),
    ("navy", "blue"),
    ("purple", "violet"),
    ("fuchsia", "magenta"),
    ("pink", "rose"),
];

/// Display name for a hue: the palette name on 30-degree stops, `hueNNN` otherwise.
pub fn hue_display_name(deg: f32) -> String {
    let deg = deg.rem_euclid(360.0);
    for (name, d) in HUE_NAMES {
        if (deg - d).abs() < 0.5 {
            return name.to_string();
        }
    }
    format!("hue{:03}", deg.round() as u32 % 360)
}

/// Parses a single token as a hue, accepting palette names, synonyms, and
/// `hueNNN` degree spellings.
pub fn parse_hue_token(token: &str) -> Option<f32> {
    let lower = token.to_lowercase();
    for (name, deg) in HUE_NAMES {
        if lower == name {
            return Some(deg);
        }
    }
    for (syn, name) in HUE_SYNONYMS {
        if lower == syn {
            return HUE_NAMES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, d)| *d);
        }
    }
    if let Some(digits) = lower.strip_prefix("hue") {
        if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
            return digits.parse::<u32>().ok().map(|d| (d % 360) as f32);
        }
    }
    None
}

/// Scans free text (e.g. an expanded prompt) for the first recognizable hue token.
pub fn extract_hue(text: &str) -> Option<f32> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .find_map(parse_hue_token)
}
