#include "epp/rates.hpp"

#include <ostream>
#include <sstream>

#include "epp/io.hpp"

namespace epp {

void write_rounds_csv(std::ostream& out, const std::vector<RoundReport<double>>& reports) {
    out << "# schema=" << kRoundsCsvSchema << '\n';
    out << "round,q_I,q_x,q_y,q_z,survival,cumulative,infidelity\n";
    for (const auto& r : reports) {
        out << r.round_index;
        for (Eigen::Index i = 0; i < 4; ++i) out << ',' << format_double(r.rates[i]);
        out << ',' << format_double(r.survival) << ',' << format_double(r.cumulative) << ','
            << format_double(r.infidelity) << '\n';
    }
}

Rates parse_rates(const std::string& text) {
    std::istringstream in(text);
    std::string field;
    std::vector<double> values;
    while (std::getline(in, field, ',')) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(field, &used);
        } catch (const std::exception&) {
            throw std::invalid_argument("not a number: '" + field + "'");
        }
        if (used != field.size()) throw std::invalid_argument("not a number: '" + field + "'");
        values.push_back(v);
    }
    if (values.size() != 4) throw std::invalid_argument("expected four comma-separated rates");
    Rates r = make_rates(values[0], values[1], values[2], values[3]);
    require_normalized(r);
    return r;
}

}  // namespace epp
