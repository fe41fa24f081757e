#include "epp/protocol.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "epp/io.hpp"

namespace epp::protocol {

namespace {

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
    return out;
}

std::string upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
    return out;
}

struct Token {
    std::string text;
    int column;  // 1-based
};

std::vector<Token> tokenize(std::string_view line) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
        const char c = line[i];
        if (c == '#') break;
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '{' || c == '}' || c == '=') {
            tokens.push_back({std::string(1, c), static_cast<int>(i + 1)});
            ++i;
            continue;
        }
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i])) && line[i] != '{' &&
               line[i] != '}' && line[i] != '=' && line[i] != '#')
            ++i;
        tokens.push_back({std::string(line.substr(start, i - start)), static_cast<int>(start + 1)});
    }
    return tokens;
}

bool is_identifier(std::string_view s) {
    if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c == '_' || c == '-'; });
}

std::optional<std::int64_t> parse_integer(std::string_view s) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::optional<double> parse_real(std::string_view s) {
    if (s.empty()) return std::nullopt;
    std::string buf(s);
    char* end = nullptr;
    const double v = std::strtod(buf.c_str(), &end);
    if (end != buf.c_str() + buf.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

// A cursor over one line's tokens.
class LineCursor {
public:
    LineCursor(std::vector<Token> tokens, int line, int end_column)
        : tokens_(std::move(tokens)), line_(line), end_column_(end_column) {}

    [[nodiscard]] bool done() const { return pos_ >= tokens_.size(); }
    [[nodiscard]] const Token* peek() const { return done() ? nullptr : &tokens_[pos_]; }
    [[nodiscard]] int line() const { return line_; }
    [[nodiscard]] int column() const { return done() ? end_column_ : tokens_[pos_].column; }

    [[noreturn]] void fail(const std::string& message, std::vector<std::string> expected = {}) const {
        throw ParseError(line_, column(), message, std::move(expected));
    }

    const Token& next(const std::vector<std::string>& expected) {
        if (done()) fail("unexpected end of line", expected);
        return tokens_[pos_++];
    }

    /// Consumes a keyword from `choices` (case-insensitive); returns its index.
    std::size_t keyword(const std::vector<std::string>& choices) {
        const Token& t = next(choices);
        const std::string u = upper(t.text);
        for (std::size_t i = 0; i < choices.size(); ++i)
            if (u == upper(choices[i])) return i;
        --pos_;
        fail("unexpected '" + t.text + "'", choices);
    }

    bool accept(std::string_view kw) {
        if (!done() && upper(tokens_[pos_].text) == upper(kw)) {
            ++pos_;
            return true;
        }
        return false;
    }

    void finish() const {
        if (!done()) fail("unexpected '" + tokens_[pos_].text + "'", {"end of line"});
    }

private:
    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
    int line_;
    int end_column_;
};

struct CountRef {
    std::string name;
    int line;
    int column;
};

class Parser {
public:
    explicit Parser(std::string_view source, std::string default_name) {
        spec_.name = std::move(default_name);
        std::size_t start = 0;
        int number = 0;
        while (start <= source.size()) {
            const std::size_t nl = source.find('\n', start);
            std::string_view text = source.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
            if (!text.empty() && text.back() == '\r') text.remove_suffix(1);
            ++number;
            auto tokens = tokenize(text);
            if (!tokens.empty()) lines_.emplace_back(std::move(tokens), number, static_cast<int>(text.size()) + 1);
            if (nl == std::string_view::npos) break;
            start = nl + 1;
        }
        last_line_ = number;
    }

    ProtocolSpec run() {
        spec_.steps = block(false);
        if (count_steps(spec_.steps) == 0) throw ParseError(last_line_, 1, "no steps");
        for (const CountRef& ref : refs_)
            if (!spec_.parameters.contains(ref.name))
                throw ParseError(ref.line, ref.column, "unbound parameter '" + ref.name + "'");
        return std::move(spec_);
    }

private:
    static std::size_t count_steps(const std::vector<Step>& steps) {
        std::size_t n = 0;
        for (const Step& s : steps) {
            ++n;
            if (const auto* r = std::get_if<Repeat>(&s.kind)) n += count_steps(r->body);
        }
        return n;
    }

    std::vector<Step> block(bool nested) {
        std::vector<Step> steps;
        while (index_ < lines_.size()) {
            LineCursor& cur = lines_[index_];
            if (cur.peek()->text == "}") {
                if (!nested) cur.fail("unmatched '}'");
                cur.next({"}"});
                cur.finish();
                ++index_;
                return steps;
            }
            ++index_;
            if (auto step = statement(cur)) steps.push_back(std::move(*step));
        }
        if (nested) throw ParseError(last_line_, 1, "unterminated REPEAT block", {"}"});
        return steps;
    }

    Count count(LineCursor& cur) {
        const int column = cur.column();
        const Token& t = cur.next({"integer", "parameter name"});
        if (const auto v = parse_integer(t.text)) {
            if (*v < 0) throw ParseError(cur.line(), column, "count must be non-negative");
            return Count{*v};
        }
        if (!is_identifier(t.text)) throw ParseError(cur.line(), column, "bad count '" + t.text + "'", {"integer", "parameter name"});
        refs_.push_back({t.text, cur.line(), column});
        return Count{t.text};
    }

    static Basis pauli(LineCursor& cur) {
        static const std::vector<std::string> names{"X", "Y", "Z"};
        return kAllBases[cur.keyword(names)];
    }

    static Role role(LineCursor& cur) {
        cur.keyword({"ON"});
        static const std::vector<std::string> names{"destination", "test", "trash", "kept"};
        return static_cast<Role>(cur.keyword(names));
    }

    static unsigned bit(LineCursor& cur) { return static_cast<unsigned>(cur.keyword({"0", "1"})); }

    std::optional<Step> statement(LineCursor& cur) {
        static const std::vector<std::string> keywords{"PROTOCOL", "PARAM",  "DISTRIBUTE", "DARKBELL", "TEST",
                                                       "REPEAT",   "BICNOT", "MEASURE",    "KEEPIF",   "DISCARD",
                                                       "GATE"};
        const int line = cur.line();
        const Token& head = *cur.peek();
        std::size_t which = 0;
        {
            const std::string u = upper(head.text);
            const auto it = std::find(keywords.begin(), keywords.end(), u);
            if (it == keywords.end()) cur.fail("unknown step kind '" + head.text + "'", keywords);
            which = static_cast<std::size_t>(it - keywords.begin());
            cur.next(keywords);
        }
        Step step{DarkBell{}, line};
        switch (which) {
            case 0: {  // PROTOCOL
                const Token& name = cur.next({"name"});
                spec_.name = name.text;
                cur.finish();
                return std::nullopt;
            }
            case 1: {  // PARAM
                const int column = cur.column();
                const Token& name = cur.next({"parameter name"});
                if (!is_identifier(name.text)) throw ParseError(line, column, "bad parameter name '" + name.text + "'");
                cur.keyword({"="});
                const int vcol = cur.column();
                const Token& value = cur.next({"number"});
                if (const auto i = parse_integer(value.text)) spec_.parameters[name.text] = *i;
                else if (const auto d = parse_real(value.text)) spec_.parameters[name.text] = *d;
                else throw ParseError(line, vcol, "bad number '" + value.text + "'", {"number"});
                cur.finish();
                return std::nullopt;
            }
            case 2: step.kind = Distribute{count(cur)}; break;
            case 3: step.kind = DarkBell{}; break;
            case 4: {
                TestSample t;
                t.basis = pauli(cur);
                t.count = count(cur);
                step.kind = t;
                break;
            }
            case 5: {  // REPEAT
                Repeat r;
                r.times = count(cur);
                cur.keyword({"{"});
                cur.finish();
                r.body = block(true);
                step.kind = std::move(r);
                return step;
            }
            case 6: {  // BICNOT
                BiCnot b;
                b.basis = cur.keyword({"Z", "X"}) == 0 ? CnotBasis::Z : CnotBasis::X;
                if (cur.accept("random")) b.grouping = Grouping::Random;
                else if (cur.accept("sequential")) b.grouping = Grouping::Sequential;
                if (cur.accept("GROUP")) {
                    const int column = cur.column();
                    const Token& n = cur.next({"group size"});
                    const auto v = parse_integer(n.text);
                    if (!v || *v < 2 || *v > 64) throw ParseError(line, column, "group size must be an integer >= 2");
                    b.group_size = static_cast<int>(*v);
                }
                step.kind = b;
                break;
            }
            case 7: step.kind = measurement(cur); break;
            case 8: {  // KEEPIF
                KeepIf k;
                if (cur.accept("ALICE")) k.source = KeepIf::Source::Alice;
                else if (cur.accept("BOB")) k.source = KeepIf::Source::Bob;
                if (cur.done()) cur.fail("unexpected end of line", {"0", "1", "ALICE", "BOB"});
                k.bit = bit(cur);
                step.kind = k;
                break;
            }
            case 9: step.kind = Discard{}; break;
            case 10: {  // GATE
                Gate g;
                g.name = cur.next({"gate name"}).text;
                const int column = cur.column();
                const auto arity = parse_integer(cur.next({"arity"}).text);
                if (!arity || *arity < 1) throw ParseError(line, column, "gate arity must be a positive integer");
                g.arity = static_cast<int>(*arity);
                step.kind = g;
                break;
            }
        }
        cur.finish();
        return step;
    }

    static StepKind measurement(LineCursor& cur) {
        switch (cur.keyword({"LOCAL", "COLLECTIVE", "PROJECTOR", "BELL"})) {
            case 0: {
                MeasureLocal m;
                const std::size_t which = cur.keyword({"X", "Y", "Z", "TILT"});
                if (which == 3) {
                    const int column = cur.column();
                    const auto deg = parse_real(cur.next({"angle in degrees"}).text);
                    if (!deg) throw ParseError(cur.line(), column, "bad angle", {"angle in degrees"});
                    m.basis = {true, Basis::Z, *deg};
                } else {
                    m.basis = {false, kAllBases[which], 0.0};
                }
                m.role = role(cur);
                return m;
            }
            case 1: {
                MeasureCollective m;
                m.basis = pauli(cur);
                m.role = role(cur);
                return m;
            }
            case 2: {
                MeasureProjector m;
                const std::size_t ket = cur.keyword({"00", "01", "10", "11"});
                m.alice = static_cast<unsigned>(ket >> 1);
                m.bob = static_cast<unsigned>(ket & 1U);
                m.role = role(cur);
                return m;
            }
            default:
                cur.keyword({"READ"});
                return BellRead{};
        }
    }

    ProtocolSpec spec_;
    std::vector<LineCursor> lines_;
    std::size_t index_ = 0;
    int last_line_ = 1;
    std::vector<CountRef> refs_;
};

std::string count_text(const Count& c) {
    if (const auto* v = std::get_if<std::int64_t>(&c.value)) return std::to_string(*v);
    return std::get<std::string>(c.value);
}

std::string basis_text(const MeasurementBasis& b) {
    if (b.tilted) return "TILT " + format_double(b.degrees);
    return std::string(to_string(b.pauli));
}

void print_steps(std::ostringstream& out, const std::vector<Step>& steps, int depth) {
    const std::string indent(static_cast<std::size_t>(2 * depth), ' ');
    for (const Step& s : steps) {
        out << indent << describe(s) << '\n';
        if (const auto* r = std::get_if<Repeat>(&s.kind)) {
            print_steps(out, r->body, depth + 1);
            out << indent << "}\n";
        }
    }
}

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};

}  // namespace

ParseError::ParseError(int line, int column, const std::string& message, std::vector<std::string> expected)
    : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) + ": " + message +
                         (expected.empty() ? "" : " (expected " + join(expected) + ")")),
      line_(line),
      column_(column),
      expected_(std::move(expected)) {}

ProtocolSpec parse(std::string_view source, std::string default_name) {
    return Parser(source, std::move(default_name)).run();
}

ProtocolSpec parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open protocol file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string stem = path.substr(path.find_last_of('/') + 1);
    stem = stem.substr(0, stem.rfind('.'));
    return parse(buf.str(), stem);
}

std::string_view to_string(Role role) {
    switch (role) {
        case Role::Destination: return "destination";
        case Role::Test: return "test";
        case Role::Trash: return "trash";
        case Role::Kept: return "kept";
    }
    return "?";
}

std::string describe(const Step& step) {
    return std::visit(
        Overloaded{
            [](const Distribute& d) { return "DISTRIBUTE " + count_text(d.pairs); },
            [](const DarkBell&) { return std::string("DARKBELL"); },
            [](const BellRead&) { return std::string("MEASURE BELL READ"); },
            [](const TestSample& t) { return "TEST " + std::string(to_string(t.basis)) + " " + count_text(t.count); },
            [](const BiCnot& b) {
                std::string s = "BICNOT " + std::string(to_string(b.basis));
                s += b.grouping == Grouping::Random ? " random" : " sequential";
                if (b.group_size != 2) s += " GROUP " + std::to_string(b.group_size);
                return s;
            },
            [](const MeasureCollective& m) {
                return "MEASURE COLLECTIVE " + std::string(to_string(m.basis)) + " ON " + std::string(to_string(m.role));
            },
            [](const MeasureLocal& m) {
                return "MEASURE LOCAL " + basis_text(m.basis) + " ON " + std::string(to_string(m.role));
            },
            [](const MeasureProjector& m) {
                return "MEASURE PROJECTOR " + std::to_string(m.alice) + std::to_string(m.bob) + " ON " +
                       std::string(to_string(m.role));
            },
            [](const Gate& g) { return "GATE " + g.name + " " + std::to_string(g.arity); },
            [](const KeepIf& k) {
                std::string s = "KEEPIF ";
                if (k.source == KeepIf::Source::Alice) s += "ALICE ";
                if (k.source == KeepIf::Source::Bob) s += "BOB ";
                return s + std::to_string(k.bit);
            },
            [](const Discard&) { return std::string("DISCARD"); },
            [](const Repeat& r) { return "REPEAT " + count_text(r.times) + " {"; },
        },
        step.kind);
}

std::string pretty_print(const ProtocolSpec& spec) {
    std::ostringstream out;
    out << "PROTOCOL " << spec.name << '\n';
    for (const auto& [name, value] : spec.parameters) {
        out << "PARAM " << name << " = ";
        if (const auto* i = std::get_if<std::int64_t>(&value)) out << *i;
        else {
            std::string text = format_double(std::get<double>(value));
            // keep reals real so they re-parse with the same alternative
            if (text.find_first_of(".eEn") == std::string::npos) text += ".0";
            out << text;
        }
        out << '\n';
    }
    print_steps(out, spec.steps, 0);
    return out.str();
}

std::int64_t resolve(const Count& count, const ProtocolSpec& spec, const std::map<std::string, ParamValue>& overrides) {
    if (const auto* v = std::get_if<std::int64_t>(&count.value)) return *v;
    const auto& name = std::get<std::string>(count.value);
    const ParamValue* value = nullptr;
    if (const auto it = overrides.find(name); it != overrides.end()) value = &it->second;
    else if (const auto jt = spec.parameters.find(name); jt != spec.parameters.end()) value = &jt->second;
    if (!value) throw std::invalid_argument("unbound parameter '" + name + "'");
    if (const auto* i = std::get_if<std::int64_t>(value)) {
        if (*i < 0) throw std::invalid_argument("parameter '" + name + "' must be non-negative");
        return *i;
    }
    const double d = std::get<double>(*value);
    if (d < 0 || d != std::floor(d)) throw std::invalid_argument("parameter '" + name + "' must be a non-negative integer");
    return static_cast<std::int64_t>(d);
}

double param_or(const ProtocolSpec& spec, const std::string& name, double fallback,
                const std::map<std::string, ParamValue>& overrides) {
    const ParamValue* value = nullptr;
    if (const auto it = overrides.find(name); it != overrides.end()) value = &it->second;
    else if (const auto jt = spec.parameters.find(name); jt != spec.parameters.end()) value = &jt->second;
    if (!value) return fallback;
    return std::visit([](auto v) { return static_cast<double>(v); }, *value);
}

}  // namespace epp::protocol
