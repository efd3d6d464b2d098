//! Character classes shared by tokenization, punctuation and scoring.

/// Han ideographs, including the compatibility block and the common
/// supplementary extensions.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x30000..=0x3134F)
}

pub fn is_cjk_str(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_cjk)
}

/// ASCII and full-width punctuation, plus the general Unicode categories the
/// standard library exposes.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '，' | '。' | '？' | '！' | '、' | '；' | '：' | '“' | '”' | '‘' | '’'
            | '（' | '）' | '《' | '》' | '【' | '】' | '…' | '—' | '·' | '「' | '」'
            | '『' | '』' | '〈' | '〉' | '～' | '﹏')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes() {
        assert!(is_cjk('中') && is_cjk('𠀀'));
        assert!(!is_cjk('a') && !is_cjk('，'));
        assert!(is_cjk_str("你好") && !is_cjk_str("你a") && !is_cjk_str(""));
        assert!(is_punctuation('，') && is_punctuation('?') && !is_punctuation('x'));
    }
}
