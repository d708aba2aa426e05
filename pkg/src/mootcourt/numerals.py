"""Chinese numeral conversion for statute citations and judgment amounts.

Value-style numerals (五百零九) and financial forms (伍佰零玖) both parse.
Rendering produces the canonical value style, bare-ten for 10-19 (十五).
"""

from __future__ import annotations

import re

DIGIT_VALUES = {
    "零": 0, "〇": 0,
    "一": 1, "壹": 1,
    "二": 2, "两": 2, "贰": 2,
    "三": 3, "叁": 3,
    "四": 4, "肆": 4,
    "五": 5, "伍": 5,
    "六": 6, "陆": 6,
    "七": 7, "柒": 7,
    "八": 8, "捌": 8,
    "九": 9, "玖": 9,
}

SMALL_UNITS = {"十": 10, "拾": 10, "百": 100, "佰": 100, "千": 1000, "仟": 1000}
BIG_UNITS = {"万": 10**4, "萬": 10**4, "亿": 10**8}

NUMERAL_CHARS = "".join(DIGIT_VALUES) + "".join(SMALL_UNITS) + "".join(BIG_UNITS)
# character class usable inside extraction regexes
NUMERAL_CLASS = f"[{NUMERAL_CHARS}]"

_DIGIT_CHARS = "零一二三四五六七八九"
_SMALL_UNIT_CHARS = ["", "十", "百", "千"]


def chinese_to_int(text: str) -> int:
    """Parse a Chinese numeral. Accepts both 十五 and 一十五 for 15."""
    if not text:
        raise ValueError("empty numeral")
    total = 0
    section = 0
    number = 0
    for ch in text:
        if ch in DIGIT_VALUES:
            number = DIGIT_VALUES[ch]
        elif ch in SMALL_UNITS:
            if number == 0:
                number = 1
            section += number * SMALL_UNITS[ch]
            number = 0
        elif ch in BIG_UNITS:
            section += number
            number = 0
            if section == 0:
                section = 1
            total += section * BIG_UNITS[ch]
            section = 0
        else:
            raise ValueError(f"not a numeral character: {ch!r}")
    return total + section + number


def numeral_to_int(token: str) -> int:
    """Arabic digits (commas allowed), a Chinese numeral, or a mixed form
    like 2万 / 3万5000."""
    token = token.strip()
    plain = token.replace(",", "").replace("，", "")
    if plain.isascii() and plain.isdigit():
        return int(plain)
    if any(ch.isascii() and ch.isdigit() for ch in plain):
        return _mixed_to_int(plain)
    return chinese_to_int(token)


def _mixed_to_int(text: str) -> int:
    total = 0
    section = 0
    number = 0
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isascii() and ch.isdigit():
            j = i
            while j < len(text) and text[j].isascii() and text[j].isdigit():
                j += 1
            number = int(text[i:j])
            i = j
            continue
        if ch in DIGIT_VALUES:
            number = DIGIT_VALUES[ch]
        elif ch in SMALL_UNITS:
            section += (number or 1) * SMALL_UNITS[ch]
            number = 0
        elif ch in BIG_UNITS:
            section += number
            number = 0
            total += (section or 1) * BIG_UNITS[ch]
            section = 0
        else:
            raise ValueError(f"not a numeral character: {ch!r}")
        i += 1
    return total + section + number


def _render_section(n: int) -> str:
    """1..9999 to value-style text, formal inner tens (一十)."""
    out = []
    digits = [int(c) for c in str(n)]
    for pos, d in enumerate(digits):
        power = len(digits) - pos - 1
        if d == 0:
            out.append("零")
        else:
            out.append(_DIGIT_CHARS[d] + _SMALL_UNIT_CHARS[power])
    s = re.sub("零+", "零", "".join(out)).rstrip("零")
    return s or "零"


def int_to_chinese(n: int) -> str:
    if n < 0:
        raise ValueError("negative values have no numeral form here")
    if n >= 10**12:
        raise ValueError("value too large")
    if n == 0:
        return "零"
    parts = []
    if n >= 10**8:
        high, n = divmod(n, 10**8)
        parts.append(_render_section(high) + "亿")
        if 0 < n < 10**7:
            parts.append("零")
    if n >= 10**4:
        high, n = divmod(n, 10**4)
        parts.append(_render_section(high) + "万")
        if 0 < n < 10**3:
            parts.append("零")
    if n:
        parts.append(_render_section(n))
    s = "".join(parts)
    if s.startswith("一十"):
        s = s[1:]
    return s
