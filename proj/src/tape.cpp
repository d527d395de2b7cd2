/**
 * @file tape.cpp
 * @brief Tape loading, validation, synthesis and splitting.
 */

#include "scr/tape.hpp"
#include "scr/rng.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

namespace scr::tape
{
    namespace
    {
        std::string trim(std::string_view s)
        {
            const auto first = s.find_first_not_of(" \t\r\n");
            if (first == std::string_view::npos)
            {
                return {};
            }
            const auto last = s.find_last_not_of(" \t\r\n");
            return std::string(s.substr(first, last - first + 1));
        }

        std::vector<std::string> split_csv_line(std::string_view line)
        {
            std::vector<std::string> cells;
            std::string cell;
            bool quoted = false;
            for (char c : line)
            {
                if (c == '"')
                {
                    quoted = !quoted;
                }
                else if (c == ',' && !quoted)
                {
                    cells.push_back(trim(cell));
                    cell.clear();
                }
                else
                {
                    cell.push_back(c);
                }
            }
            cells.push_back(trim(cell));
            return cells;
        }

        bool is_missing(const std::string &cell)
        {
            if (cell.empty())
            {
                return true;
            }
            std::string lower(cell);
            std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c)
                           { return static_cast<char>(std::tolower(c)); });
            return lower == "na" || lower == "nan" || lower == "null" || lower == "n/a";
        }

        double parse_number(const std::string &cell, std::size_t line_no, const std::string &column)
        {
            double value = 0.0;
            const char *begin = cell.data();
            const char *end = cell.data() + cell.size();
            const auto [ptr, ec] = std::from_chars(begin, end, value);
            if (ec != std::errc() || ptr != end || !std::isfinite(value))
            {
                throw DataError("line " + std::to_string(line_no) + ": column '" + column +
                                "' is not a finite number: '" + cell + "'");
            }
            return value;
        }
    }

    Date parse_date(std::string_view text)
    {
        const std::string s = trim(text);
        int y = 0;
        unsigned m = 0;
        unsigned d = 0;
        char dash1 = 0;
        char dash2 = 0;
        std::istringstream in(s);
        in >> y >> dash1 >> m >> dash2 >> d;
        if (!in || dash1 != '-' || dash2 != '-' || !in.eof())
        {
            throw DataError("not an ISO-8601 date: '" + s + "'");
        }
        const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
        if (!ymd.ok())
        {
            throw DataError("invalid calendar date: '" + s + "'");
        }
        return std::chrono::sys_days{ymd};
    }

    std::string format_date(Date d)
    {
        const std::chrono::year_month_day ymd{d};
        std::ostringstream out;
        out << std::setfill('0') << std::setw(4) << static_cast<int>(ymd.year()) << '-' << std::setw(2)
            << static_cast<unsigned>(ymd.month()) << '-' << std::setw(2) << static_cast<unsigned>(ymd.day());
        return out.str();
    }

    std::optional<std::size_t> ReturnTape::index_on_or_before(Date d) const
    {
        const auto it = std::upper_bound(dates.begin(), dates.end(), d);
        if (it == dates.begin())
        {
            return std::nullopt;
        }
        return static_cast<std::size_t>(std::distance(dates.begin(), it) - 1);
    }

    void ReturnTape::validate() const
    {
        const auto T = static_cast<Eigen::Index>(dates.size());
        const auto N = static_cast<Eigen::Index>(asset_ids.size());
        if (T < 2 || N < 1)
        {
            throw DataError("tape needs at least two days and one asset");
        }
        if (prices.rows() != T || prices.cols() != N || returns.rows() != T - 1 || returns.cols() != N)
        {
            throw DataError("tape matrix shapes are inconsistent");
        }
        if (macro.rows() != T || macro.cols() != static_cast<Eigen::Index>(macro_ids.size()))
        {
            throw DataError("macro matrix shape is inconsistent");
        }
        for (std::size_t t = 1; t < dates.size(); ++t)
        {
            if (!(dates[t - 1] < dates[t]))
            {
                throw DataError("dates must be strictly increasing (at " + format_date(dates[t]) + ")");
            }
        }
        if (!(prices.array() > 0.0).all())
        {
            throw DataError("all prices must be strictly positive");
        }
    }

    Mat simple_returns(const Mat &prices)
    {
        const Eigen::Index T = prices.rows();
        Mat r(std::max<Eigen::Index>(T - 1, 0), prices.cols());
        for (Eigen::Index t = 0; t + 1 < T; ++t)
        {
            r.row(t) = ((prices.row(t + 1) - prices.row(t)).array() / prices.row(t).array()).matrix();
        }
        return r;
    }

    void standardize_macro(ReturnTape &tape, std::size_t fit_rows)
    {
        fit_rows = std::min(fit_rows, tape.days());
        if (tape.macro_raw.cols() == 0)
        {
            tape.macro = tape.macro_raw;
            tape.standardized_rows = fit_rows;
            return;
        }
        tape.macro_scaler = ColumnScaler::fit(tape.macro_raw.topRows(static_cast<Eigen::Index>(fit_rows)));
        tape.macro = tape.macro_scaler.apply_rows(tape.macro_raw);
        tape.standardized_rows = fit_rows;
    }

    UniverseCategory parse_category(std::string_view text)
    {
        if (text == "MarketProxy" || text == "Market-Proxy")
            return UniverseCategory::MarketProxy;
        if (text == "HighVol" || text == "High-Vol")
            return UniverseCategory::HighVol;
        if (text == "LowVol" || text == "Low-Vol")
            return UniverseCategory::LowVol;
        if (text == "General")
            return UniverseCategory::General;
        throw ConfigError("unknown universe category '" + std::string(text) + "'");
    }

    std::string to_string(UniverseCategory c)
    {
        switch (c)
        {
        case UniverseCategory::MarketProxy:
            return "Market-Proxy";
        case UniverseCategory::HighVol:
            return "High-Vol";
        case UniverseCategory::LowVol:
            return "Low-Vol";
        case UniverseCategory::General:
            return "General";
        }
        return "General";
    }

    void Universe::validate(const ReturnTape &tape) const
    {
        if (asset_ids.size() < 2 || asset_ids.size() > tape.assets())
        {
            throw ConfigError("universe '" + name + "' must hold between 2 and " + std::to_string(tape.assets()) +
                              " assets");
        }
        for (const auto &id : asset_ids)
        {
            if (std::find(tape.asset_ids.begin(), tape.asset_ids.end(), id) == tape.asset_ids.end())
            {
                throw ConfigError("universe '" + name + "' references unknown asset '" + id + "'");
            }
        }
    }

    ReturnTape select_universe(const ReturnTape &tape, const Universe &universe)
    {
        universe.validate(tape);
        ReturnTape out = tape;
        out.asset_ids = universe.asset_ids;
        out.prices.resize(tape.prices.rows(), static_cast<Eigen::Index>(universe.asset_ids.size()));
        for (std::size_t j = 0; j < universe.asset_ids.size(); ++j)
        {
            const auto it = std::find(tape.asset_ids.begin(), tape.asset_ids.end(), universe.asset_ids[j]);
            out.prices.col(static_cast<Eigen::Index>(j)) = tape.prices.col(std::distance(tape.asset_ids.begin(), it));
        }
        out.returns = simple_returns(out.prices);
        return out;
    }

    ReturnTape parse_tape_csv(std::string_view text, const LoadSchema &schema)
    {
        std::vector<std::string> lines;
        {
            std::size_t start = 0;
            while (start <= text.size())
            {
                const auto nl = text.find('\n', start);
                const auto end = nl == std::string_view::npos ? text.size() : nl;
                lines.emplace_back(text.substr(start, end - start));
                if (nl == std::string_view::npos)
                {
                    break;
                }
                start = nl + 1;
            }
        }
        while (!lines.empty() && trim(lines.back()).empty())
        {
            lines.pop_back();
        }
        if (lines.empty())
        {
            throw DataError("CSV is empty");
        }

        const auto header = split_csv_line(lines.front());
        std::unordered_map<std::string, std::size_t> col_index;
        for (std::size_t j = 0; j < header.size(); ++j)
        {
            if (header[j].empty() || !col_index.emplace(header[j], j).second)
            {
                throw DataError("line 1: empty or duplicate column name '" + header[j] + "'");
            }
        }
        const auto date_it = col_index.find(schema.date_column);
        if (date_it == col_index.end())
        {
            throw DataError("line 1: missing date column '" + schema.date_column + "'");
        }

        std::vector<std::string> asset_cols = schema.asset_columns;
        std::vector<std::string> macro_cols;
        for (const auto &name : header)
        {
            if (name == schema.date_column)
                continue;
            if (name.rfind(schema.macro_prefix, 0) == 0)
            {
                macro_cols.push_back(name);
            }
            else if (schema.asset_columns.empty())
            {
                asset_cols.push_back(name);
            }
        }
        if (asset_cols.empty())
        {
            throw DataError("CSV has no asset price columns");
        }
        for (const auto &name : asset_cols)
        {
            if (!col_index.count(name))
            {
                throw DataError("line 1: missing asset column '" + name + "'");
            }
        }

        ReturnTape tape;
        tape.asset_ids = asset_cols;
        tape.macro_ids = macro_cols;
        std::vector<std::vector<double>> price_rows;
        std::vector<std::vector<double>> macro_rows;

        for (std::size_t i = 1; i < lines.size(); ++i)
        {
            const std::size_t line_no = i + 1;
            if (trim(lines[i]).empty())
            {
                continue;
            }
            const auto cells = split_csv_line(lines[i]);
            if (cells.size() != header.size())
            {
                throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                                " cells, found " + std::to_string(cells.size()));
            }
            const std::string &date_cell = cells[date_it->second];
            if (is_missing(date_cell))
            {
                throw DataError("line " + std::to_string(line_no) + ": missing date");
            }
            Date date;
            try
            {
                date = parse_date(date_cell);
            }
            catch (const DataError &e)
            {
                throw DataError("line " + std::to_string(line_no) + ": " + e.what());
            }

            bool missing = false;
            std::vector<double> prow;
            std::vector<double> mrow;
            for (const auto &name : asset_cols)
            {
                const auto &cell = cells[col_index.at(name)];
                if (is_missing(cell))
                {
                    missing = true;
                    break;
                }
                const double p = parse_number(cell, line_no, name);
                if (p <= 0.0)
                {
                    throw DataError("line " + std::to_string(line_no) + ": non-positive price in column '" + name + "'");
                }
                prow.push_back(p);
            }
            if (!missing)
            {
                for (const auto &name : macro_cols)
                {
                    const auto &cell = cells[col_index.at(name)];
                    if (is_missing(cell))
                    {
                        missing = true;
                        break;
                    }
                    mrow.push_back(parse_number(cell, line_no, name));
                }
            }
            if (missing)
            {
                const std::string msg = "line " + std::to_string(line_no) + " (" + date_cell + "): missing value, row dropped";
                spdlog::warn("{}", msg);
                tape.warnings.push_back(msg);
                continue;
            }
            if (!tape.dates.empty() && !(tape.dates.back() < date))
            {
                throw DataError("line " + std::to_string(line_no) + ": dates must be strictly increasing");
            }
            tape.dates.push_back(date);
            price_rows.push_back(std::move(prow));
            macro_rows.push_back(std::move(mrow));
        }

        if (tape.dates.size() < schema.min_rows)
        {
            throw DataError("only " + std::to_string(tape.dates.size()) + " usable rows; at least " +
                            std::to_string(schema.min_rows) + " required");
        }

        const auto T = static_cast<Eigen::Index>(tape.dates.size());
        tape.prices.resize(T, static_cast<Eigen::Index>(asset_cols.size()));
        tape.macro_raw.resize(T, static_cast<Eigen::Index>(macro_cols.size()));
        for (Eigen::Index t = 0; t < T; ++t)
        {
            for (Eigen::Index j = 0; j < tape.prices.cols(); ++j)
                tape.prices(t, j) = price_rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
            for (Eigen::Index j = 0; j < tape.macro_raw.cols(); ++j)
                tape.macro_raw(t, j) = macro_rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
        }
        tape.returns = simple_returns(tape.prices);

        std::size_t fit_rows = tape.days();
        if (schema.standardize_until)
        {
            const auto idx = tape.index_on_or_before(*schema.standardize_until);
            if (!idx || *idx < 1)
            {
                throw DataError("standardization window before the tape has fewer than two rows");
            }
            fit_rows = *idx + 1;
        }
        standardize_macro(tape, fit_rows);
        tape.validate();
        return tape;
    }

    ReturnTape load_tape(const std::string &path, const LoadSchema &schema)
    {
        std::ifstream in(path);
        if (!in)
        {
            throw DataError("cannot open tape file '" + path + "'");
        }
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_tape_csv(buf.str(), schema);
    }

    void write_tape_csv(const ReturnTape &tape, const std::string &path)
    {
        std::ofstream out(path);
        if (!out)
        {
            throw DataError("cannot write '" + path + "'");
        }
        out << "date";
        for (const auto &id : tape.asset_ids)
            out << ',' << id;
        for (const auto &id : tape.macro_ids)
            out << ',' << id;
        out << '\n';
        out << std::setprecision(17);
        for (std::size_t t = 0; t < tape.days(); ++t)
        {
            const auto ti = static_cast<Eigen::Index>(t);
            out << format_date(tape.dates[t]);
            for (Eigen::Index j = 0; j < tape.prices.cols(); ++j)
                out << ',' << tape.prices(ti, j);
            for (Eigen::Index j = 0; j < tape.macro_raw.cols(); ++j)
                out << ',' << tape.macro_raw(ti, j);
            out << '\n';
        }
    }

    void SyntheticTapeConfig::validate() const
    {
        if (n_assets < 1 || n_days < 3)
        {
            throw ConfigError("synthetic tape needs n_assets >= 1 and n_days >= 3");
        }
        if (regimes.empty())
        {
            throw ConfigError("synthetic tape needs at least one regime");
        }
        for (std::size_t r = 0; r < regimes.size(); ++r)
        {
            const auto &spec = regimes[r];
            const auto n = static_cast<Eigen::Index>(n_assets);
            if (spec.mean.size() != n || spec.covariance.rows() != n || spec.covariance.cols() != n)
            {
                throw ConfigError("regime " + std::to_string(r) + " has mismatched dimensions");
            }
            if (!(spec.expected_duration >= 1.0))
            {
                throw ConfigError("regime " + std::to_string(r) + " expected duration must be >= 1");
            }
            if ((spec.covariance - spec.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12)
            {
                throw ConfigError("regime " + std::to_string(r) + " covariance is not symmetric");
            }
            Eigen::SelfAdjointEigenSolver<Mat> eig(spec.covariance);
            const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
            if (eig.eigenvalues().minCoeff() < -1e-12 * scale)
            {
                throw ConfigError("regime " + std::to_string(r) + " covariance is not positive semidefinite");
            }
        }
        for (const auto &f : schedule)
        {
            if (f.regime >= regimes.size())
            {
                throw ConfigError("schedule references unknown regime " + std::to_string(f.regime));
            }
        }
        if (macro_noise < 0.0)
        {
            throw ConfigError("macro_noise must be non-negative");
        }
    }

    SyntheticTape generate_synthetic_tape(const SyntheticTapeConfig &cfg)
    {
        cfg.validate();
        const std::size_t N = cfg.n_assets;
        const std::size_t T = cfg.n_days;
        const std::size_t R = cfg.regimes.size();
        Rng regime_rng = make_rng(cfg.seed, "tape.regime");
        Rng return_rng = make_rng(cfg.seed, "tape.returns");
        Rng macro_rng = make_rng(cfg.seed, "tape.macro");

        std::vector<Mat> factors;
        for (const auto &spec : cfg.regimes)
        {
            Eigen::SelfAdjointEigenSolver<Mat> eig(spec.covariance);
            const Vec root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
            factors.push_back(eig.eigenvectors() * root.asDiagonal());
        }

        SyntheticTape out;
        out.regime_path.assign(T, 0);
        out.anomaly_day.assign(T, false);
        for (std::size_t t = 1; t < T; ++t)
        {
            std::size_t s = out.regime_path[t - 1];
            const double stay = 1.0 - 1.0 / cfg.regimes[s].expected_duration;
            const double u = uniform01(regime_rng);
            if (R > 1 && u >= stay)
            {
                std::size_t next = uniform_index(regime_rng, R - 1);
                s = next >= s ? next + 1 : next;
            }
            out.regime_path[t] = s;
        }
        for (const auto &f : cfg.schedule)
        {
            for (std::size_t t = f.start; t < std::min(T, f.start + f.length); ++t)
                out.regime_path[t] = f.regime;
        }
        std::vector<double> return_shift(T, 0.0);
        std::vector<double> macro_shift(T, 0.0);
        for (const auto &a : cfg.anomalies)
        {
            for (std::size_t t = a.start; t < std::min(T, a.start + a.length); ++t)
            {
                out.anomaly_day[t] = true;
                return_shift[t] += a.return_shift;
                macro_shift[t] += a.macro_shift;
            }
        }

        ReturnTape &tape = out.tape;
        const auto Ti = static_cast<Eigen::Index>(T);
        const auto Ni = static_cast<Eigen::Index>(N);
        tape.prices.resize(Ti, Ni);
        tape.prices.row(0).setConstant(100.0);
        Vec z(Ni);
        for (std::size_t t = 1; t < T; ++t)
        {
            const auto s = out.regime_path[t];
            for (Eigen::Index j = 0; j < Ni; ++j)
                z(j) = standard_normal(return_rng);
            Vec r = cfg.regimes[s].mean + factors[s] * z;
            r.array() += return_shift[t];
            r = r.cwiseMax(-0.95);
            const auto ti = static_cast<Eigen::Index>(t);
            tape.prices.row(ti) = (tape.prices.row(ti - 1).array() * (1.0 + r.transpose().array())).matrix();
        }
        tape.returns = simple_returns(tape.prices);

        const std::size_t M = R + cfg.extra_macro;
        tape.macro_raw.resize(Ti, static_cast<Eigen::Index>(M));
        for (std::size_t t = 0; t < T; ++t)
        {
            const auto ti = static_cast<Eigen::Index>(t);
            for (std::size_t m = 0; m < M; ++m)
            {
                const double base = (m < R && out.regime_path[t] == m) ? 1.0 : 0.0;
                tape.macro_raw(ti, static_cast<Eigen::Index>(m)) =
                    base + macro_shift[t] + cfg.macro_noise * standard_normal(macro_rng);
            }
        }

        for (std::size_t j = 0; j < N; ++j)
            tape.asset_ids.push_back("A" + std::to_string(j));
        for (std::size_t m = 0; m < M; ++m)
            tape.macro_ids.push_back(m < R ? "macro_regime" + std::to_string(m) : "macro_noise" + std::to_string(m - R));

        Date d = parse_date(cfg.start_date);
        for (std::size_t t = 0; t < T; ++t)
        {
            while (std::chrono::weekday{d}.c_encoding() == 0 || std::chrono::weekday{d}.c_encoding() == 6)
                d += std::chrono::days{1};
            tape.dates.push_back(d);
            d += std::chrono::days{1};
        }

        const std::size_t fit_rows = cfg.standardize_rows.value_or(std::max<std::size_t>(2, (T * 6) / 10));
        standardize_macro(tape, fit_rows);
        tape.validate();
        return out;
    }

    SplitIndices split(const ReturnTape &tape, const SplitSpec &spec)
    {
        if (!(spec.train_end < spec.valid_end && spec.valid_end < spec.test_end))
        {
            throw ConfigError("split dates must satisfy train_end < valid_end < test_end");
        }
        const auto i_train = tape.index_on_or_before(spec.train_end);
        const auto i_valid = tape.index_on_or_before(spec.valid_end);
        const auto i_test = tape.index_on_or_before(spec.test_end);
        if (!i_train || !i_valid || !i_test)
        {
            throw DataError("split date precedes the start of the tape");
        }
        SplitIndices s;
        s.train = {0, *i_train + 1};
        s.valid = {*i_train + 1, *i_valid + 1};
        s.test = {*i_valid + 1, *i_test + 1};
        if (s.train.size() == 0 || s.valid.size() == 0 || s.test.size() == 0)
        {
            throw DataError("split produces an empty segment");
        }
        return s;
    }

    ReturnTape slice(const ReturnTape &tape, Segment seg)
    {
        if (seg.end > tape.days() || seg.begin >= seg.end)
        {
            throw DataError("invalid segment");
        }
        const auto b = static_cast<Eigen::Index>(seg.begin);
        const auto n = static_cast<Eigen::Index>(seg.size());
        ReturnTape out;
        out.dates.assign(tape.dates.begin() + seg.begin, tape.dates.begin() + seg.end);
        out.prices = tape.prices.middleRows(b, n);
        out.returns = simple_returns(out.prices);
        out.macro = tape.macro.middleRows(b, n);
        out.macro_raw = tape.macro_raw.middleRows(b, n);
        out.asset_ids = tape.asset_ids;
        out.macro_ids = tape.macro_ids;
        out.macro_scaler = tape.macro_scaler;
        out.standardized_rows = tape.standardized_rows;
        return out;
    }
}
