#include "kgd/llm_extract.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <optional>
#include <map>
#include <unordered_set>

#include "kgd/util.hpp"

namespace kgd::extract {

std::string ChoiceAnswer::str() const {
    std::string out;
    for (char c : letters) {
        if (!out.empty()) out.push_back(',');
        out.push_back(c);
    }
    return out;
}

namespace {

bool is_ascii_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_ascii_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }

bool starts_at(std::string_view s, size_t pos, std::string_view what) {
    return pos <= s.size() && s.substr(pos, what.size()) == what;
}

// ---------------------------------------------------------------------------
// Unit canonicalization

struct Mapping {
    std::string_view from;
    std::string_view to;
};

constexpr std::array<Mapping, 7> kSymbolTable{{
    {"\xC3\x97", "*"},      // ×
    {"\xC2\xB7", "*"},      // ·
    {"\xE2\x8B\x85", "*"},  // ⋅
    {"\xE2\x88\x92", "-"},  // −
    {"\xE2\x80\x93", "-"},  // –
    {"\xC2\xBA", "\xC2\xB0"},  // º -> °
    {"\xCB\x9A", "\xC2\xB0"},  // ˚ -> °
}};

// Returns the ASCII equivalent of a superscript glyph at `pos`, and its byte length.
std::optional<std::pair<char, size_t>> superscript_at(std::string_view s, size_t pos) {
    if (starts_at(s, pos, "\xC2\xB9")) return std::pair{'1', size_t{2}};
    if (starts_at(s, pos, "\xC2\xB2")) return std::pair{'2', size_t{2}};
    if (starts_at(s, pos, "\xC2\xB3")) return std::pair{'3', size_t{2}};
    if (starts_at(s, pos, "\xE2\x81") && pos + 2 < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[pos + 2]);
        if (c == 0xB0) return std::pair{'0', size_t{3}};
        if (c >= 0xB4 && c <= 0xB9) return std::pair{static_cast<char>('4' + (c - 0xB4)), size_t{3}};
        if (c == 0xBA) return std::pair{'+', size_t{3}};
        if (c == 0xBB) return std::pair{'-', size_t{3}};
    }
    return std::nullopt;
}

bool simple_exponent_body(std::string_view body) {
    if (body.empty()) return false;
    return std::all_of(body.begin(), body.end(), [](char c) {
        return is_ascii_alnum(c) || c == '-' || c == '+' || c == '.' || c == '/';
    });
}

// Unit tokens that are whole English words.
const std::unordered_set<std::string>& spelled_units() {
    static const std::unordered_set<std::string> units{
        "meter", "meters", "metre", "metres", "second", "seconds", "minute", "minutes", "hour",
        "hours", "day", "days", "year", "years", "gram", "grams", "kilogram", "kilograms",
        "newton", "newtons", "joule", "joules", "watt", "watts", "volt", "volts", "ampere",
        "amperes", "amps", "ohm", "ohms", "kelvin", "celsius", "pascal", "pascals", "hertz",
        "tesla", "coulomb", "coulombs", "farad", "farads", "henry", "mole", "moles", "liter",
        "liters", "litre", "litres", "degree", "degrees", "radian", "radians", "percent",
        "atm", "rpm", "disintegrations",
    };
    return units;
}

const std::unordered_set<std::string>& unit_stopwords() {
    static const std::unordered_set<std::string> words{
        "a", "an", "and", "are", "as", "at", "be", "but", "by", "can", "did", "do", "for",
        "had", "has", "he", "her", "him", "his", "how", "i", "if", "in", "is", "it", "its",
        "may", "me", "my", "no", "nor", "not", "of", "on", "or", "our", "per", "she", "so",
        "the", "to", "too", "two", "up", "us", "was", "we", "who", "why", "yes", "yet", "you",
        "all", "any", "few", "one", "out", "own", "off", "new", "now", "old", "see", "way",
        "use", "get", "got", "let", "put", "say", "set", "ten", "six", "far", "why",
    };
    return words;
}

// True when `token` plausibly names a physical unit.
bool unit_like(std::string_view token) {
    if (token.empty()) return false;
    unsigned char first = static_cast<unsigned char>(token[0]);
    bool starts_ok = is_ascii_alpha(token[0]) || token[0] == '%' || first >= 0x80;
    if (!starts_ok) return false;
    bool all_alpha = true;
    for (size_t i = 0; i < token.size(); ++i) {
        char c = token[i];
        unsigned char u = static_cast<unsigned char>(c);
        if (u >= 0x80) {
            all_alpha = false;
            continue;
        }
        if (is_ascii_alpha(c)) continue;
        all_alpha = false;
        if (is_digit(c) || std::strchr("/^*-(){}._%", c) != nullptr) continue;
        return false;
    }
    if (!all_alpha) return true;
    // Single capitals are SI symbols (A, V, W, J, N, K); "I" is the pronoun.
    if (token.size() == 1 && is_upper(token[0]) && token[0] != 'I') return true;
    std::string lower = to_lower(token);
    if (spelled_units().contains(lower)) return true;
    return token.size() <= 3 && !unit_stopwords().contains(lower);
}

}  // namespace

std::string canonicalize_unit(std::string_view unit) {
    std::string s;
    s.reserve(unit.size());
    for (size_t i = 0; i < unit.size();) {
        bool mapped = false;
        for (const auto& m : kSymbolTable) {
            if (starts_at(unit, i, m.from)) {
                s += m.to;
                i += m.from.size();
                mapped = true;
                break;
            }
        }
        if (mapped) continue;
        if (superscript_at(unit, i)) {
            s.push_back('^');
            while (i < unit.size()) {
                auto sup = superscript_at(unit, i);
                if (!sup) break;
                s.push_back(sup->first);
                i += sup->second;
            }
            continue;
        }
        s.push_back(unit[i]);
        ++i;
    }

    std::string flat;
    flat.reserve(s.size());
    for (size_t i = 0; i < s.size();) {
        if (s[i] == '^' && i + 1 < s.size() && s[i + 1] == '{') {
            size_t close = s.find('}', i + 2);
            if (close != std::string::npos) {
                std::string_view body(s.data() + i + 2, close - i - 2);
                if (simple_exponent_body(body)) {
                    flat.push_back('^');
                    flat += body;
                    i = close + 1;
                    continue;
                }
            }
        }
        flat.push_back(s[i]);
        ++i;
    }

    std::string out;
    out.reserve(flat.size());
    bool pending_space = false;
    for (char c : flat) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON blocks

namespace {

struct Fence {
    std::string lang;
    std::string body;
};

std::vector<Fence> fenced_blocks(std::string_view text) {
    std::vector<Fence> out;
    size_t pos = 0;
    while (true) {
        size_t open = text.find("```", pos);
        if (open == std::string_view::npos) break;
        size_t eol = text.find('\n', open);
        if (eol == std::string_view::npos) break;
        std::string lang = trim(text.substr(open + 3, eol - open - 3));
        size_t close = text.find("```", eol + 1);
        if (close == std::string_view::npos) break;
        out.push_back({to_lower(lang), std::string(text.substr(eol + 1, close - eol - 1))});
        pos = close + 3;
    }
    return out;
}

// End index (inclusive) of the balanced object starting at `open`, if any.
std::optional<size_t> balanced_end(std::string_view text, size_t open) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (size_t i = open; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i;
        }
    }
    return std::nullopt;
}

}  // namespace

std::string extract_json_block(std::string_view text) {
    auto fences = fenced_blocks(text);
    for (const auto& f : fences) {
        if (f.lang == "json") {
            auto body = trim(f.body);
            if (!body.empty()) return body;
        }
    }
    for (const auto& f : fences) {
        auto body = trim(f.body);
        if (!body.empty() && body.front() == '{') return body;
    }
    for (size_t open = text.find('{'); open != std::string_view::npos; open = text.find('{', open + 1)) {
        if (auto end = balanced_end(text, open)) {
            return std::string(text.substr(open, *end - open + 1));
        }
    }
    throw NotFound("no JSON object in completion");
}

// ---------------------------------------------------------------------------
// Sub-queries

namespace {

bool is_blank(std::string_view line) { return trim(line).empty(); }

bool is_indented(std::string_view line) {
    return !line.empty() && (line[0] == ' ' || line[0] == '\t');
}

std::string strip_emphasis(std::string s) {
    for (std::string_view mark : {"**", "__"}) {
        size_t p;
        while ((p = s.find(mark)) != std::string::npos) s.erase(p, mark.size());
    }
    return s;
}

std::string clean_body(std::string_view body) {
    std::string s = trim(body);
    while (s.size() >= 2 && s.compare(s.size() - 2, 2, "\\\\") == 0) s = trim(s.substr(0, s.size() - 2));
    return trim(strip_emphasis(s));
}

// Strips leading markdown decoration ("#", ">", "-", "*", "•") from a line.
std::string strip_lead(std::string_view line) {
    std::string s = trim(line);
    size_t i = 0;
    while (i < s.size()) {
        if (s[i] == '#' || s[i] == '>' || s[i] == '*' || s[i] == '-' || s[i] == ' ') {
            ++i;
        } else if (starts_at(s, i, "\xE2\x80\xA2")) {
            i += 3;
        } else {
            break;
        }
    }
    return s.substr(i);
}

// "Subquery 3: body" / "Sub-query 3. body" / "Sub-question 3) body"
std::optional<std::string> labeled_item(std::string_view line) {
    std::string s = strip_emphasis(strip_lead(line));
    std::string lower = to_lower(s);
    size_t i = 0;
    if (!starts_at(lower, 0, "sub")) return std::nullopt;
    i = 3;
    if (i < lower.size() && (lower[i] == '-' || lower[i] == ' ')) ++i;
    if (starts_at(lower, i, "query")) {
        i += 5;
    } else if (starts_at(lower, i, "question")) {
        i += 8;
    } else {
        return std::nullopt;
    }
    while (i < lower.size() && lower[i] == ' ') ++i;
    size_t digits = i;
    while (i < lower.size() && is_digit(lower[i])) ++i;
    if (i == digits) return std::nullopt;
    while (i < lower.size() && lower[i] == ' ') ++i;
    if (i < lower.size() && (lower[i] == ':' || lower[i] == '.' || lower[i] == ')' || lower[i] == '-')) {
        ++i;
    } else {
        return std::nullopt;
    }
    return clean_body(s.substr(i));
}

std::optional<std::string> numbered_item(std::string_view line) {
    std::string s = trim(line);
    size_t i = 0;
    if (i < s.size() && s[i] == '(') ++i;
    size_t digits = i;
    while (i < s.size() && is_digit(s[i])) ++i;
    if (i == digits || i - digits > 2) return std::nullopt;
    if (i >= s.size() || (s[i] != '.' && s[i] != ')')) return std::nullopt;
    ++i;
    if (i < s.size() && is_digit(s[i])) return std::nullopt;  // "1.5 m"
    return clean_body(s.substr(i));
}

std::optional<std::string> bullet_item(std::string_view line) {
    std::string s = trim(line);
    for (std::string_view mark : {"- ", "* ", "\xE2\x80\xA2", "\xE2\x80\x93 "}) {
        if (starts_at(s, 0, mark)) return clean_body(s.substr(mark.size()));
    }
    return std::nullopt;
}

bool mentions_subqueries(std::string_view line) {
    std::string lower = to_lower(line);
    return lower.find("subquer") != std::string::npos || lower.find("sub-quer") != std::string::npos ||
           lower.find("sub-question") != std::string::npos || lower.find("subquestion") != std::string::npos;
}

using ItemMatcher = std::optional<std::string> (*)(std::string_view);

// Collects a run of items starting at `from`. Items may be separated by blank
// lines; indented non-item lines continue the previous item. Any other line
// ends the run once at least one item has been seen.
std::vector<std::string> collect_items(const std::vector<std::string>& lines, size_t from, ItemMatcher match,
                                       bool allow_gaps_before_first) {
    std::vector<std::string> items;
    for (size_t i = from; i < lines.size(); ++i) {
        const auto& line = lines[i];
        if (auto body = match(line)) {
            items.push_back(*body);
            continue;
        }
        if (is_blank(line)) continue;
        if (!items.empty() && is_indented(line)) {
            auto extra = clean_body(line);
            if (!extra.empty()) {
                if (!items.back().empty()) items.back() += ' ';
                items.back() += extra;
            }
            continue;
        }
        if (!items.empty() || !allow_gaps_before_first) break;
    }
    items.erase(std::remove_if(items.begin(), items.end(), [](const std::string& s) { return s.empty(); }),
                items.end());
    return items;
}

}  // namespace

std::vector<std::string> extract_subqueries(std::string_view text) {
    auto lines = split_lines(text);

    std::vector<std::string> labeled;
    for (size_t i = 0; i < lines.size(); ++i) {
        auto body = labeled_item(lines[i]);
        if (!body) continue;
        std::string item = *body;
        while (i + 1 < lines.size() && is_indented(lines[i + 1]) && !is_blank(lines[i + 1]) &&
               !labeled_item(lines[i + 1])) {
            auto extra = clean_body(lines[++i]);
            if (!item.empty()) item += ' ';
            item += extra;
        }
        if (!item.empty()) labeled.push_back(std::move(item));
    }
    if (!labeled.empty()) return labeled;

    std::optional<size_t> heading;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (mentions_subqueries(lines[i]) && !numbered_item(lines[i]) && !bullet_item(lines[i])) {
            heading = i;
            break;
        }
    }

    auto numbered = collect_items(lines, heading ? *heading + 1 : 0, numbered_item, true);
    if (!numbered.empty()) return numbered;

    if (heading) return collect_items(lines, *heading + 1, bullet_item, true);
    return {};
}

// ---------------------------------------------------------------------------
// Numbers

namespace {

struct Cursor {
    std::string_view s;
    size_t i = 0;

    bool done() const { return i >= s.size(); }
    char peek(size_t ahead = 0) const { return i + ahead < s.size() ? s[i + ahead] : '\0'; }
    void skip_inline_space() {
        while (!done() && (s[i] == ' ' || s[i] == '\t')) ++i;
    }
    bool eat(std::string_view what) {
        if (starts_at(s, i, what)) {
            i += what.size();
            return true;
        }
        return false;
    }
};

bool eat_minus(Cursor& c) { return c.eat("-") || c.eat("\xE2\x88\x92"); }

std::optional<int> parse_int(Cursor& c) {
    size_t save = c.i;
    int sign = 1;
    if (eat_minus(c)) {
        sign = -1;
    } else {
        c.eat("+");
    }
    size_t start = c.i;
    int v = 0;
    while (!c.done() && is_digit(c.peek()) && c.i - start < 5) v = v * 10 + (c.s[c.i++] - '0');
    if (c.i == start) {
        c.i = save;
        return std::nullopt;
    }
    return sign * v;
}

// "× 10^{-5}", "x 10^-5", "\times 10^{-5}", "* 10^5", "×10⁻⁵"
std::optional<int> power_of_ten(Cursor& c) {
    size_t save = c.i;
    c.skip_inline_space();
    if (!(c.eat("\xC3\x97") || c.eat("\xC2\xB7") || c.eat("\\times") || c.eat("\\cdot") || c.eat("x") ||
          c.eat("*"))) {
        c.i = save;
        return std::nullopt;
    }
    c.skip_inline_space();
    if (!c.eat("10")) {
        c.i = save;
        return std::nullopt;
    }
    if (c.eat("^")) {
        if (c.eat("{")) {
            c.skip_inline_space();
            auto e = parse_int(c);
            c.skip_inline_space();
            if (e && c.eat("}")) return e;
        } else if (auto e = parse_int(c)) {
            return e;
        }
        c.i = save;
        return std::nullopt;
    }
    if (superscript_at(c.s, c.i)) {
        std::string digits;
        while (auto sup = superscript_at(c.s, c.i)) {
            digits.push_back(sup->first);
            c.i += sup->second;
        }
        try {
            return std::stoi(digits);
        } catch (...) {
        }
    }
    c.i = save;
    return std::nullopt;
}

// Strips LaTeX wrappers that often surround units: \text{N/m}^2 -> N/m^2
std::string delatex_token(std::string_view token) {
    std::string t(token);
    for (std::string_view cmd : {"\\text{", "\\mathrm{", "\\rm{"}) {
        size_t p;
        while ((p = t.find(cmd)) != std::string::npos) {
            size_t close = t.find('}', p + cmd.size());
            if (close == std::string::npos) break;
            t = t.substr(0, p) + t.substr(p + cmd.size(), close - p - cmd.size()) + t.substr(close + 1);
        }
    }
    return t;
}

// Reads the unit following a number, up to end of line or sentence punctuation.
std::string read_unit(Cursor& c) {
    std::string unit;
    size_t committed = c.i;
    while (true) {
        Cursor probe = c;
        probe.skip_inline_space();
        while (probe.eat("\\,") || probe.eat("\\;") || probe.eat("\\ ") || probe.eat("\\!")) probe.skip_inline_space();
        size_t start = probe.i;
        while (!probe.done() && probe.peek() != ' ' && probe.peek() != '\t' && probe.peek() != '\n' &&
               probe.peek() != '\r') {
            ++probe.i;
        }
        if (probe.i == start) break;
        std::string raw(c.s.substr(start, probe.i - start));
        bool terminal = false;
        while (!raw.empty()) {
            // Closing math delimiters: \) \] $
            if (raw.ends_with("\\)") || raw.ends_with("\\]")) {
                terminal = true;
                raw.resize(raw.size() - 2);
                continue;
            }
            if (raw.back() == '$') {
                terminal = true;
                raw.pop_back();
                continue;
            }
            char last = raw.back();
            bool unbalanced_paren =
                last == ')' && std::count(raw.begin(), raw.end(), '(') < std::count(raw.begin(), raw.end(), ')');
            if (std::strchr(".,;:!?\"'", last) == nullptr && !unbalanced_paren) break;
            terminal = true;
            raw.pop_back();
        }
        std::string token = delatex_token(raw);
        if (!unit_like(token)) break;
        if (!unit.empty()) unit.push_back(' ');
        unit += token;
        c.i = probe.i;
        committed = c.i;
        if (terminal) break;
    }
    c.i = committed;
    return unit;
}

bool blocks_number_start(char prev) {
    return is_ascii_alnum(prev) || prev == '_' || prev == '^' || prev == '.' || prev == '/' || prev == '\\' ||
           prev == ',';
}

}  // namespace

std::vector<Quantity> scan_quantities(std::string_view text) {
    std::vector<Quantity> out;
    Cursor c{text, 0};
    while (!c.done()) {
        size_t start = c.i;
        int sign = 1;
        Cursor probe = c;
        if (probe.peek() == '-' || probe.peek() == '+' || starts_at(text, probe.i, "\xE2\x88\x92")) {
            bool minus = probe.peek() != '+';
            probe.eat("-") || probe.eat("+") || probe.eat("\xE2\x88\x92");
            if (is_digit(probe.peek()) && (start == 0 || !blocks_number_start(text[start - 1]))) {
                sign = minus ? -1 : 1;
                c = probe;
            } else {
                c.i = start + 1;
                continue;
            }
        } else if (!is_digit(c.peek()) || (start > 0 && blocks_number_start(text[start - 1]))) {
            ++c.i;
            continue;
        }

        std::string mantissa;
        size_t int_start = c.i;
        while (!c.done() && is_digit(c.peek())) mantissa.push_back(c.s[c.i++]);
        if (c.i - int_start <= 3) {
            while (c.peek() == ',' && is_digit(c.peek(1)) && is_digit(c.peek(2)) && is_digit(c.peek(3)) &&
                   !is_digit(c.peek(4))) {
                mantissa.append(c.s.substr(c.i + 1, 3));
                c.i += 4;
            }
        }
        if (c.peek() == '.' && is_digit(c.peek(1))) {
            mantissa.push_back('.');
            ++c.i;
            while (!c.done() && is_digit(c.peek())) mantissa.push_back(c.s[c.i++]);
        }
        if ((c.peek() == 'e' || c.peek() == 'E') &&
            (is_digit(c.peek(1)) || ((c.peek(1) == '-' || c.peek(1) == '+') && is_digit(c.peek(2))))) {
            mantissa.push_back('e');
            ++c.i;
            if (c.peek() == '-' || c.peek() == '+') mantissa.push_back(c.s[c.i++]);
            while (!c.done() && is_digit(c.peek())) mantissa.push_back(c.s[c.i++]);
        }
        // A letter glued to the number ("3rd", "2x") is not a quantity.
        if (is_ascii_alpha(c.peek()) && c.peek() != 'x') {
            while (!c.done() && is_ascii_alnum(c.peek())) ++c.i;
            continue;
        }

        double value = sign * std::strtod(mantissa.c_str(), nullptr);
        if (auto exp = power_of_ten(c)) value *= std::pow(10.0, *exp);
        std::string unit = read_unit(c);
        if (std::isfinite(value)) out.push_back({value, canonicalize_unit(unit)});
        if (c.i == start) ++c.i;
    }
    return out;
}

Quantity extract_numeric_answer(std::string_view text, const NumericOptions& options) {
    if (options.anchor == NumericAnchor::AfterFinalAnswerMark) {
        std::string lower = to_lower(text);
        size_t mark = lower.rfind("final answer");
        if (mark != std::string::npos) {
            auto after = scan_quantities(text.substr(mark));
            if (!after.empty()) return after.front();
        }
    }
    auto all = scan_quantities(text);
    if (all.empty()) throw NotFound("no numeric value in completion");
    return all.back();
}

// ---------------------------------------------------------------------------
// Choices

namespace {

bool word_boundary_before(std::string_view s, size_t pos) { return pos == 0 || !is_ascii_alnum(s[pos - 1]); }
bool word_boundary_after(std::string_view s, size_t pos) { return pos >= s.size() || !is_ascii_alnum(s[pos]); }

void skip_spaces(std::string_view s, size_t& i) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r')) ++i;
}

bool eat_word(std::string_view lower, size_t& i, std::string_view word) {
    if (starts_at(lower, i, word) && word_boundary_after(lower, i + word.size())) {
        i += word.size();
        return true;
    }
    return false;
}

// Parses "A", "(B)", "A and C", "A, B or D" starting at i.
std::set<char> letter_list(std::string_view text, std::string_view lower, size_t i) {
    std::set<char> out;
    while (true) {
        skip_spaces(text, i);
        size_t j = i;
        bool paren = j < text.size() && text[j] == '(';
        if (paren) ++j;
        if (j >= text.size() || !is_upper(text[j]) || !word_boundary_after(text, j + 1)) break;
        char letter = text[j];
        ++j;
        if (paren) {
            if (j >= text.size() || text[j] != ')') break;
            ++j;
        }
        out.insert(letter);
        i = j;
        size_t k = i;
        skip_spaces(text, k);
        if (k < text.size() && (text[k] == ',' || text[k] == '&' || text[k] == '/')) {
            i = k + 1;
        } else if (eat_word(lower, k, "and") || eat_word(lower, k, "or")) {
            i = k;
        } else {
            break;
        }
    }
    return out;
}

// Letters named by the last "<keyword> [is|are|:] X[, and Y]" phrase.
std::set<char> last_keyword_letters(std::string_view text, std::string_view lower, std::string_view keyword) {
    std::set<char> last;
    for (size_t p = lower.find(keyword); p != std::string::npos; p = lower.find(keyword, p + 1)) {
        if (!word_boundary_before(lower, p)) continue;
        size_t i = p + keyword.size();
        if (i < lower.size() && lower[i] == 's') ++i;
        if (!word_boundary_after(lower, i)) continue;
        skip_spaces(lower, i);
        if (i < lower.size() && (lower[i] == ':' || lower[i] == '=' || lower[i] == '-')) {
            ++i;
        } else {
            for (std::string_view verb : {"is", "are", "would be", "will be", "should be"}) {
                if (eat_word(lower, i, verb)) break;
            }
        }
        skip_spaces(lower, i);
        if (keyword == "answer") {
            size_t k = i;
            if (eat_word(lower, k, "option") || eat_word(lower, k, "options")) i = k;
        }
        auto letters = letter_list(text, lower, i);
        if (!letters.empty()) last = std::move(letters);
    }
    return last;
}

// Standalone "X." or "(X)" markers.
std::set<char> standalone_letters(std::string_view text) {
    std::set<char> found;
    for (size_t i = 0; i < text.size(); ++i) {
        if (!is_upper(text[i]) || !word_boundary_before(text, i)) continue;
        bool dotted = i + 1 < text.size() && text[i + 1] == '.' && word_boundary_after(text, i + 2);
        bool parenthesized = i > 0 && text[i - 1] == '(' && i + 1 < text.size() && text[i + 1] == ')';
        if (dotted || parenthesized) found.insert(text[i]);
    }
    return found;
}

size_t last_quarter_start(std::string_view text) {
    size_t start = text.size() - text.size() / 4;
    while (start < text.size() && (static_cast<unsigned char>(text[start]) & 0xC0) == 0x80) ++start;
    return start;
}

// Empty when the text names no letter.
std::set<char> explicit_letters(std::string_view text) {
    const std::string lower = to_lower(text);
    for (std::string_view keyword : {"answer", "option"}) {
        auto letters = last_keyword_letters(text, lower, keyword);
        if (!letters.empty()) return letters;
    }
    auto tail = standalone_letters(text.substr(last_quarter_start(text)));
    if (!tail.empty()) return tail;
    return standalone_letters(text);
}

}  // namespace

ChoiceAnswer extract_choice_answer(std::string_view text) {
    auto letters = explicit_letters(text);
    if (letters.empty()) throw NotFound("no choice letter in completion");
    return {letters};
}

std::vector<std::string> extract_question_options(std::string_view question) {
    struct Marker {
        char key;  // 'A'.. or '1'..
        std::string body;
    };
    auto marker = [](std::string_view line) -> std::optional<Marker> {
        std::string s = trim(line);
        size_t i = 0;
        bool paren = !s.empty() && s[0] == '(';
        if (paren) ++i;
        if (i >= s.size()) return std::nullopt;
        char key = s[i];
        size_t j = i + 1;
        if (is_digit(key)) {
            while (j < s.size() && is_digit(s[j])) ++j;
            if (j - i > 1) return std::nullopt;
        } else if (is_ascii_alpha(key)) {
            key = static_cast<char>(std::toupper(static_cast<unsigned char>(key)));
        } else {
            return std::nullopt;
        }
        if (j >= s.size()) return std::nullopt;
        if (paren ? s[j] != ')' : (s[j] != '.' && s[j] != ')')) return std::nullopt;
        ++j;
        if (j < s.size() && s[j] != ' ' && s[j] != '\t') return std::nullopt;
        return Marker{key, trim(s.substr(j))};
    };

    auto lines = split_lines(question);
    std::vector<std::string> options;
    char base = 0;
    for (size_t i = 0; i < lines.size(); ++i) {
        auto m = marker(lines[i]);
        if (!m) {
            if (!options.empty() && is_indented(lines[i]) && !is_blank(lines[i])) {
                options.back() += ' ' + trim(lines[i]);
                continue;
            }
            if (!options.empty() && !is_blank(lines[i])) break;
            continue;
        }
        if (options.empty()) {
            if (m->key != 'A' && m->key != '1') continue;
            base = m->key;
        }
        if (m->key != base + static_cast<char>(options.size())) {
            if (!options.empty()) break;
            continue;
        }
        options.push_back(m->body);
    }
    return options;
}

namespace {

const std::unordered_set<std::string>& alignment_stopwords() {
    static const std::unordered_set<std::string> words{
        "the", "a", "an", "and", "or", "of", "to", "in", "on", "at", "by", "for", "with", "is", "are",
        "was", "were", "be", "been", "it", "its", "this", "that", "then", "than", "as", "from", "into",
        "will", "would", "have", "has", "had", "do", "does", "not", "no", "so", "if", "he", "she",
        "they", "his", "her", "their", "which", "what", "while", "there", "these", "those", "can",
        "could", "should", "more", "most", "likely", "also", "all", "any", "some", "such", "very",
    };
    return words;
}

std::string stem(std::string word) {
    for (std::string_view suffix : {"ing", "ed", "ly", "es", "s"}) {
        if (word.size() >= suffix.size() + 3 && word.compare(word.size() - suffix.size(), suffix.size(), suffix) == 0) {
            word.resize(word.size() - suffix.size());
            break;
        }
    }
    if (word.size() > 5) word.resize(5);
    return word;
}

std::vector<std::string> content_stems(std::string_view text) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&] {
        if (word.size() >= 3 && !alignment_stopwords().contains(word) &&
            !std::all_of(word.begin(), word.end(), is_digit)) {
            out.push_back(stem(word));
        }
        word.clear();
    };
    for (char c : text) {
        if (is_ascii_alnum(c)) {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::vector<std::string> sentences(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        cur.push_back(c == '\n' ? ' ' : c);
        bool end = (c == '.' || c == '!' || c == '?') && (i + 1 >= text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])));
        bool paragraph = c == '\n' && i + 1 < text.size() && text[i + 1] == '\n';
        if (end || paragraph) {
            if (!trim(cur).empty()) out.push_back(trim(cur));
            cur.clear();
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

std::set<char> numbered_references(std::string_view text, size_t option_count) {
    std::string lower = to_lower(text);
    std::set<char> found;
    for (std::string_view keyword : {"option", "scenario", "choice", "alternative"}) {
        for (size_t p = lower.find(keyword); p != std::string::npos; p = lower.find(keyword, p + 1)) {
            if (!word_boundary_before(lower, p)) continue;
            size_t i = p + keyword.size();
            skip_spaces(lower, i);
            if (i < lower.size() && lower[i] == '#') ++i;
            size_t d = i;
            while (i < lower.size() && is_digit(lower[i])) ++i;
            if (i == d || i - d > 2 || !word_boundary_after(lower, i)) continue;
            size_t n = std::stoul(std::string(lower.substr(d, i - d)));
            size_t limit = option_count == 0 ? 26 : option_count;
            if (n >= 1 && n <= limit) found.insert(static_cast<char>('A' + n - 1));
        }
    }
    return found;
}

std::set<char> ordinal_references(std::string_view text, size_t option_count) {
    static const std::array<std::string_view, 5> ordinals{"first", "second", "third", "fourth", "fifth"};
    std::string lower = to_lower(text);
    std::set<char> found;
    auto check = [&](std::string_view word, size_t index) {
        if (option_count != 0 && index >= option_count) return;
        for (size_t p = lower.find(word); p != std::string::npos; p = lower.find(word, p + 1)) {
            if (!word_boundary_before(lower, p)) continue;
            size_t i = p + word.size();
            if (!word_boundary_after(lower, i)) continue;
            skip_spaces(lower, i);
            for (std::string_view noun : {"option", "scenario", "choice", "alternative", "approach"}) {
                size_t k = i;
                if (eat_word(lower, k, noun) || (starts_at(lower, k, noun) && lower.size() > k + noun.size() &&
                                                 lower[k + noun.size()] == 's')) {
                    found.insert(static_cast<char>('A' + index));
                    break;
                }
            }
        }
    };
    for (size_t i = 0; i < ordinals.size(); ++i) check(ordinals[i], i);
    check("former", 0);
    if (option_count >= 2) check("latter", option_count - 1);
    return found;
}

// Minimum ordered content-word overlap for the alignment fallback.
constexpr size_t kMinAlignment = 3;

}  // namespace

std::optional<ChoiceAnswer> resolve_choice(std::string_view text, const std::vector<std::string>& options) {
    const size_t count = options.size();
    auto in_range = [&](const std::set<char>& letters) {
        return !letters.empty() &&
               (count == 0 || std::all_of(letters.begin(), letters.end(),
                                          [&](char c) { return static_cast<size_t>(c - 'A') < count; }));
    };

    if (auto letters = explicit_letters(text); in_range(letters)) return ChoiceAnswer{letters};
    const std::string_view regions[] = {text.substr(last_quarter_start(text)), text};
    for (auto region : regions) {
        if (auto letters = numbered_references(region, count); in_range(letters)) return ChoiceAnswer{letters};
    }
    for (auto region : regions) {
        if (auto letters = ordinal_references(region, count); in_range(letters)) return ChoiceAnswer{letters};
    }
    if (count == 0) return std::nullopt;

    std::vector<std::vector<std::string>> option_stems;
    for (const auto& option : options) option_stems.push_back(content_stems(option));
    std::vector<size_t> best(count, 0);
    for (const auto& sentence : sentences(text)) {
        auto stems = content_stems(sentence);
        for (size_t k = 0; k < count; ++k) best[k] = std::max(best[k], lcs_length(stems, option_stems[k]));
    }
    auto top = std::max_element(best.begin(), best.end());
    if (*top < kMinAlignment || std::count(best.begin(), best.end(), *top) > 1) return std::nullopt;
    return ChoiceAnswer{{static_cast<char>('A' + (top - best.begin()))}};
}

}  // namespace kgd::extract
