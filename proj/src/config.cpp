#include "scr/config.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <regex>
#include <set>
#include <sstream>

namespace scr::cli
{
    namespace
    {
        using nlohmann::json;

        std::string escape_token(const std::string &s)
        {
            std::string out;
            for (char c : s)
            {
                if (c == '~')
                    out += "~0";
                else if (c == '/')
                    out += "~1";
                else
                    out += c;
            }
            return out;
        }

        /// Input iterator that counts newlines as the parser consumes characters.
        class LineCountingIterator
        {
        public:
            using iterator_category = std::input_iterator_tag;
            using value_type = char;
            using difference_type = std::ptrdiff_t;
            using pointer = const char *;
            using reference = const char &;

            LineCountingIterator(const char *p, std::size_t *line) : p_(p), line_(line) {}
            reference operator*() const { return *p_; }
            LineCountingIterator &operator++()
            {
                if (*p_ == '\n')
                    ++*line_;
                ++p_;
                return *this;
            }
            LineCountingIterator operator++(int)
            {
                auto old = *this;
                ++*this;
                return old;
            }
            bool operator==(const LineCountingIterator &o) const { return p_ == o.p_; }
            bool operator!=(const LineCountingIterator &o) const { return p_ != o.p_; }

        private:
            const char *p_;
            std::size_t *line_;
        };

        /// Records the line of every object key, keyed by JSON pointer.
        class KeyLineRecorder : public nlohmann::json_sax<json>
        {
        public:
            explicit KeyLineRecorder(const std::size_t *line) : line_(line) {}

            bool null() override { return scalar(); }
            bool boolean(bool) override { return scalar(); }
            bool number_integer(number_integer_t) override { return scalar(); }
            bool number_unsigned(number_unsigned_t) override { return scalar(); }
            bool number_float(number_float_t, const string_t &) override { return scalar(); }
            bool string(string_t &) override { return scalar(); }
            bool binary(binary_t &) override { return scalar(); }
            bool start_object(std::size_t) override
            {
                frames_.push_back({false, {}, 0});
                return true;
            }
            bool key(string_t &k) override
            {
                frames_.back().key = k;
                lines[pointer()] = *line_;
                return true;
            }
            bool end_object() override
            {
                frames_.pop_back();
                return scalar();
            }
            bool start_array(std::size_t) override
            {
                frames_.push_back({true, {}, 0});
                return true;
            }
            bool end_array() override
            {
                frames_.pop_back();
                return scalar();
            }
            bool parse_error(std::size_t, const std::string &, const nlohmann::detail::exception &) override { return false; }

            std::map<std::string, std::size_t> lines;

        private:
            struct Frame
            {
                bool is_array;
                std::string key;
                std::size_t index;
            };

            bool scalar()
            {
                if (!frames_.empty() && frames_.back().is_array)
                    ++frames_.back().index;
                return true;
            }

            std::string pointer() const
            {
                std::string p;
                for (const auto &f : frames_)
                    p += "/" + (f.is_array ? std::to_string(f.index) : escape_token(f.key));
                return p;
            }

            const std::size_t *line_;
            std::vector<Frame> frames_;
        };

        struct Context
        {
            std::string source;
            std::map<std::string, std::size_t> lines;

            std::size_t line_of(std::string ptr) const
            {
                while (true)
                {
                    if (const auto it = lines.find(ptr); it != lines.end())
                        return it->second;
                    const auto slash = ptr.rfind('/');
                    if (slash == std::string::npos || ptr.empty())
                        return 1;
                    ptr.erase(slash);
                }
            }

            [[noreturn]] void fail(const std::string &ptr, const std::string &msg) const
            {
                throw ConfigError(fmt::format("{}:{}: {}{}", source, line_of(ptr), ptr.empty() ? "" : ptr + ": ", msg));
            }
        };

        /// Strict view of one JSON object: unknown keys and type mismatches are reported with lines.
        class Section
        {
        public:
            Section(const json &j, std::string ptr, const Context &ctx) : j_(j), ptr_(std::move(ptr)), ctx_(ctx)
            {
                if (!j_.is_object())
                    ctx_.fail(ptr_, "expected an object");
            }

            void allow(const std::vector<std::string> &keys) const
            {
                for (auto it = j_.begin(); it != j_.end(); ++it)
                {
                    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
                    {
                        std::string list;
                        for (const auto &k : keys)
                            list += (list.empty() ? "" : ", ") + k;
                        ctx_.fail(child(it.key()), fmt::format("unknown key '{}' (allowed: {})", it.key(), list));
                    }
                }
            }

            bool has(const std::string &key) const { return j_.contains(key); }
            const json &at(const std::string &key) const { return j_.at(key); }
            std::string child(const std::string &key) const { return ptr_ + "/" + escape_token(key); }

            template <class T>
            void get(const std::string &key, T &out) const
            {
                if (!j_.contains(key))
                    return;
                if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>)
                {
                    const auto &v = j_.at(key);
                    if (!v.is_number_integer())
                        ctx_.fail(child(key), "'" + key + "' must be an integer");
                    if (std::is_unsigned_v<T> && !v.is_number_unsigned())
                        ctx_.fail(child(key), "'" + key + "' must be non-negative");
                }
                try
                {
                    out = j_.at(key).get<T>();
                }
                catch (const json::exception &)
                {
                    ctx_.fail(child(key), "wrong type for '" + key + "'");
                }
            }

            void get_date(const std::string &key, tape::Date &out) const
            {
                std::string s;
                get(key, s);
                try
                {
                    out = tape::parse_date(s);
                }
                catch (const std::exception &e)
                {
                    ctx_.fail(child(key), e.what());
                }
            }

            /// Runs `check`; a ConfigError is re-raised at the line of the first key named in its message.
            template <class F>
            void validate(const std::vector<std::string> &keys, F &&check) const
            {
                try
                {
                    check();
                }
                catch (const Error &e)
                {
                    const std::string msg = e.what();
                    std::string where = ptr_;
                    std::size_t best = std::string::npos;
                    for (const auto &k : keys)
                    {
                        const std::regex word("\\b" + k + "\\b");
                        std::smatch m;
                        if (j_.contains(k) && std::regex_search(msg, m, word) && static_cast<std::size_t>(m.position(0)) < best)
                        {
                            best = static_cast<std::size_t>(m.position(0));
                            where = child(k);
                        }
                    }
                    ctx_.fail(where, msg);
                }
            }

            const json &value() const { return j_; }
            const Context &ctx() const { return ctx_; }
            const std::string &ptr() const { return ptr_; }

        private:
            const json &j_;
            std::string ptr_;
            const Context &ctx_;
        };

        Vec vector_or_scalar(const json &j, std::size_t n, const std::string &ptr, const Context &ctx)
        {
            Vec v(static_cast<Eigen::Index>(n));
            if (j.is_number())
            {
                v.setConstant(j.get<double>());
                return v;
            }
            if (!j.is_array() || j.size() != n)
                ctx.fail(ptr, fmt::format("expected a number or an array of {} numbers", n));
            for (std::size_t i = 0; i < n; ++i)
            {
                if (!j[i].is_number())
                    ctx.fail(ptr, "expected numbers");
                v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
            }
            return v;
        }

        tape::RegimeSpec parse_regime(const Section &s, std::size_t n)
        {
            s.allow({"mean", "covariance", "vol", "correlation", "expected_duration"});
            tape::RegimeSpec r;
            r.mean = s.has("mean") ? vector_or_scalar(s.at("mean"), n, s.child("mean"), s.ctx()) : Vec::Zero(static_cast<Eigen::Index>(n));
            if (s.has("covariance") && (s.has("vol") || s.has("correlation")))
                s.ctx().fail(s.ptr(), "give either covariance or vol/correlation");
            const auto ni = static_cast<Eigen::Index>(n);
            if (s.has("covariance"))
            {
                const auto &c = s.at("covariance");
                if (!c.is_array() || c.size() != n)
                    s.ctx().fail(s.child("covariance"), fmt::format("expected a {0}x{0} matrix", n));
                r.covariance.resize(ni, ni);
                for (std::size_t i = 0; i < n; ++i)
                    r.covariance.row(static_cast<Eigen::Index>(i)) =
                        vector_or_scalar(c[i], n, s.child("covariance") + "/" + std::to_string(i), s.ctx()).transpose();
            }
            else
            {
                const Vec vol = s.has("vol") ? vector_or_scalar(s.at("vol"), n, s.child("vol"), s.ctx()) : Vec::Constant(ni, 0.01);
                double rho = 0.0;
                s.get("correlation", rho);
                if (!(rho > -1.0 / static_cast<double>(std::max<std::size_t>(n - 1, 1)) - 1e-12 && rho <= 1.0))
                    s.ctx().fail(s.child("correlation"), "correlation outside the PSD range");
                Mat corr = Mat::Constant(ni, ni, rho);
                corr.diagonal().setOnes();
                r.covariance = vol.asDiagonal() * corr * vol.asDiagonal();
            }
            s.get("expected_duration", r.expected_duration);
            return r;
        }

        tape::SyntheticTapeConfig parse_synthetic(const Section &s, bool &seed_fixed)
        {
            s.allow({"n_assets", "n_days", "regimes", "seed", "macro_noise", "extra_macro", "schedule", "anomalies",
                     "start_date"});
            tape::SyntheticTapeConfig c;
            s.get("n_assets", c.n_assets);
            s.get("n_days", c.n_days);
            seed_fixed = s.has("seed");
            s.get("seed", c.seed);
            s.get("macro_noise", c.macro_noise);
            s.get("extra_macro", c.extra_macro);
            s.get("start_date", c.start_date);
            if (c.n_assets == 0)
                s.ctx().fail(s.child("n_assets"), "n_assets must be >= 1");
            if (!s.has("regimes") || !s.at("regimes").is_array())
                s.ctx().fail(s.ptr(), "regimes must be a non-empty array");
            const auto &regimes = s.at("regimes");
            for (std::size_t i = 0; i < regimes.size(); ++i)
                c.regimes.push_back(parse_regime(Section(regimes[i], s.child("regimes") + "/" + std::to_string(i), s.ctx()), c.n_assets));
            if (s.has("schedule"))
            {
                const auto &sched = s.at("schedule");
                if (!sched.is_array())
                    s.ctx().fail(s.child("schedule"), "expected an array");
                for (std::size_t i = 0; i < sched.size(); ++i)
                {
                    Section f(sched[i], s.child("schedule") + "/" + std::to_string(i), s.ctx());
                    f.allow({"start", "length", "regime"});
                    tape::ForcedRegime fr;
                    f.get("start", fr.start);
                    f.get("length", fr.length);
                    f.get("regime", fr.regime);
                    if (fr.regime >= c.regimes.size())
                        s.ctx().fail(f.child("regime"), "regime index out of range");
                    c.schedule.push_back(fr);
                }
            }
            if (s.has("anomalies"))
            {
                const auto &an = s.at("anomalies");
                if (!an.is_array())
                    s.ctx().fail(s.child("anomalies"), "expected an array");
                for (std::size_t i = 0; i < an.size(); ++i)
                {
                    Section f(an[i], s.child("anomalies") + "/" + std::to_string(i), s.ctx());
                    f.allow({"start", "length", "macro_shift", "return_shift"});
                    tape::AnomalyBlock b;
                    f.get("start", b.start);
                    f.get("length", b.length);
                    f.get("macro_shift", b.macro_shift);
                    f.get("return_shift", b.return_shift);
                    c.anomalies.push_back(b);
                }
            }
            s.validate({"n_assets", "n_days", "regimes", "macro_noise", "start_date"}, [&] { c.validate(); });
            return c;
        }

        const std::vector<std::string> &agent_keys()
        {
            static const std::vector<std::string> keys = []
            {
                // samples, seed and reward weights live in the scr/env sections and the seeds list
                const std::set<std::string> excluded{"name", "seed", "samples", "eta", "lambda_rho", "lambda_conc", "cost_rate"};
                const json defaults = agent::TrainConfig{}.to_json();
                std::vector<std::string> out;
                for (auto it = defaults.begin(); it != defaults.end(); ++it)
                {
                    if (!excluded.contains(it.key()))
                        out.push_back(it.key());
                }
                return out;
            }();
            return keys;
        }

        RunConfig parse(const json &root, const Context &ctx)
        {
            Section top(root, "", ctx);
            top.allow({"tape", "universes", "split", "scr", "env", "agent", "allocator", "strategy", "seeds", "out"});
            RunConfig cfg;

            if (!top.has("tape"))
                ctx.fail("", "missing required section 'tape'");
            {
                Section t(top.at("tape"), "/tape", ctx);
                t.allow({"path", "synthetic", "date_column", "asset_columns", "macro_prefix", "min_rows"});
                if (t.has("path") == t.has("synthetic"))
                    ctx.fail("/tape", "give exactly one of 'path' and 'synthetic'");
                t.get("path", cfg.tape.path);
                t.get("date_column", cfg.tape.schema.date_column);
                t.get("asset_columns", cfg.tape.schema.asset_columns);
                t.get("macro_prefix", cfg.tape.schema.macro_prefix);
                t.get("min_rows", cfg.tape.schema.min_rows);
                if (t.has("synthetic"))
                    cfg.tape.synthetic = parse_synthetic(Section(t.at("synthetic"), "/tape/synthetic", ctx), cfg.tape.synthetic_seed_fixed);
            }

            if (top.has("universes"))
            {
                const auto &u = top.at("universes");
                if (!u.is_array())
                    ctx.fail("/universes", "expected an array");
                std::set<std::string> names;
                for (std::size_t i = 0; i < u.size(); ++i)
                {
                    Section s(u[i], "/universes/" + std::to_string(i), ctx);
                    s.allow({"name", "assets", "category"});
                    tape::Universe uni;
                    s.get("name", uni.name);
                    s.get("assets", uni.asset_ids);
                    std::string cat = "general";
                    s.get("category", cat);
                    s.validate({"category"}, [&] { uni.category = tape::parse_category(cat); });
                    if (uni.name.empty() || uni.asset_ids.empty())
                        ctx.fail(s.ptr(), "a universe needs a name and at least one asset");
                    if (!names.insert(uni.name).second)
                        ctx.fail(s.child("name"), "duplicate universe name '" + uni.name + "'");
                    cfg.universes.push_back(std::move(uni));
                }
            }

            if (top.has("split"))
            {
                Section s(top.at("split"), "/split", ctx);
                s.allow({"train_end", "valid_end", "test_end", "train_fraction", "valid_fraction"});
                const bool by_date = s.has("train_end") || s.has("valid_end") || s.has("test_end");
                if (by_date)
                {
                    if (s.has("train_fraction") || s.has("valid_fraction"))
                        ctx.fail("/split", "give either split dates or split fractions");
                    if (!(s.has("train_end") && s.has("valid_end") && s.has("test_end")))
                        ctx.fail("/split", "split dates need train_end, valid_end and test_end");
                    tape::SplitSpec d;
                    s.get_date("train_end", d.train_end);
                    s.get_date("valid_end", d.valid_end);
                    s.get_date("test_end", d.test_end);
                    if (!(d.train_end < d.valid_end && d.valid_end < d.test_end))
                        ctx.fail("/split", "split dates must satisfy train_end < valid_end < test_end");
                    cfg.split.dates = d;
                }
                s.get("train_fraction", cfg.split.train_fraction);
                s.get("valid_fraction", cfg.split.valid_fraction);
                const double a = cfg.split.train_fraction, b = cfg.split.valid_fraction;
                if (!(a > 0.0 && b >= 0.0 && a + b < 1.0))
                    ctx.fail(s.has("train_fraction") ? "/split/train_fraction" : "/split",
                             "fractions need train_fraction > 0, valid_fraction >= 0 and a positive test share");
            }

            if (top.has("scr"))
            {
                Section s(top.at("scr"), "/scr", ctx);
                const std::vector<std::string> keys{"k", "samples", "q_shock", "lambda_sq", "chi_lookback", "vol_window",
                                                    "fit_window", "ridge", "horizon", "var_ridge", "embedding_window",
                                                    "embedding_dim", "gate_window", "gate_quantile", "gate_alpha", "gate_min"};
                s.allow(keys);
                auto &c = cfg.scr;
                s.get("k", c.k);
                s.get("samples", c.samples);
                s.get("q_shock", c.q_shock);
                if (s.has("lambda_sq"))
                {
                    double l = 0.0;
                    s.get("lambda_sq", l);
                    c.lambda_sq = l;
                }
                s.get("chi_lookback", c.chi_lookback);
                s.get("vol_window", c.vol_window);
                s.get("fit_window", c.fit_window);
                s.get("ridge", c.ridge);
                s.get("horizon", c.horizon);
                s.get("var_ridge", c.var_ridge);
                s.get("embedding_window", c.embedding.window);
                s.get("embedding_dim", c.embedding.dim);
                s.get("gate_window", c.gate.window);
                s.get("gate_quantile", c.gate.quantile);
                s.get("gate_alpha", c.gate.alpha);
                s.get("gate_min", c.gate.g_min);
                s.validate(keys, [&] { c.validate(); });
            }

            if (top.has("env"))
            {
                Section s(top.at("env"), "/env", ctx);
                const std::vector<std::string> keys{"lo", "hi", "turnover_cap", "cost_rate", "ewma_decay", "eta", "lambda_rho", "lambda_conc"};
                s.allow(keys);
                s.get("lo", cfg.env.constraints.lo);
                s.get("hi", cfg.env.constraints.hi);
                s.get("turnover_cap", cfg.env.constraints.turnover_cap);
                s.get("cost_rate", cfg.env.cost_rate);
                s.get("ewma_decay", cfg.env.ewma_decay);
                s.get("eta", cfg.reward.eta);
                s.get("lambda_rho", cfg.reward.lambda_rho);
                s.get("lambda_conc", cfg.reward.lambda_conc);
                cfg.reward.cost_rate = cfg.env.cost_rate;
                const auto &c = cfg.env.constraints;
                if (!(c.lo <= c.hi && c.hi > 0.0))
                    ctx.fail("/env", "box needs lo <= hi and hi > 0");
                if (!(c.turnover_cap > 0.0))
                    ctx.fail(s.has("turnover_cap") ? "/env/turnover_cap" : "/env", "turnover_cap must be positive");
                if (!(cfg.env.cost_rate >= 0.0))
                    ctx.fail("/env/cost_rate", "cost_rate must be >= 0");
                if (!(cfg.env.ewma_decay >= 0.0 && cfg.env.ewma_decay < 1.0))
                    ctx.fail("/env/ewma_decay", "ewma_decay must lie in [0, 1)");
            }

            if (top.has("agent"))
            {
                Section s(top.at("agent"), "/agent", ctx);
                s.allow(agent_keys());
                s.validate(agent_keys(), [&] { cfg.agent = agent::TrainConfig::from_json(s.value()); });
            }

            if (top.has("allocator"))
            {
                Section s(top.at("allocator"), "/allocator", ctx);
                s.allow({"lookback", "risk_aversion"});
                s.get("lookback", cfg.allocator.lookback);
                s.get("risk_aversion", cfg.allocator.risk_aversion);
                if (cfg.allocator.lookback < 3)
                    ctx.fail("/allocator/lookback", "lookback must be >= 3");
                if (!(cfg.allocator.risk_aversion > 0.0))
                    ctx.fail("/allocator/risk_aversion", "risk_aversion must be positive");
            }

            if (top.has("strategy"))
            {
                const auto &s = top.at("strategy");
                cfg.strategies.clear();
                if (s.is_string())
                    cfg.strategies.push_back(s.get<std::string>());
                else if (s.is_array())
                {
                    for (const auto &x : s)
                    {
                        if (!x.is_string())
                            ctx.fail("/strategy", "expected strategy names");
                        cfg.strategies.push_back(x.get<std::string>());
                    }
                }
                else
                    ctx.fail("/strategy", "expected a strategy name or a list of names");
                if (cfg.strategies.empty())
                    ctx.fail("/strategy", "no strategy given");
                const auto known = strategy_names();
                for (const auto &name : cfg.strategies)
                {
                    if (std::find(known.begin(), known.end(), name) == known.end())
                    {
                        std::string list;
                        for (const auto &k : known)
                            list += (list.empty() ? "" : ", ") + k;
                        ctx.fail("/strategy", "unknown strategy '" + name + "' (known: " + list + ")");
                    }
                }
            }

            if (top.has("seeds"))
            {
                const auto &s = top.at("seeds");
                cfg.seeds.clear();
                try
                {
                    if (s.is_number_unsigned())
                        cfg.seeds.push_back(s.get<std::uint64_t>());
                    else
                        cfg.seeds = s.get<std::vector<std::uint64_t>>();
                }
                catch (const json::exception &)
                {
                    ctx.fail("/seeds", "seeds must be non-negative integers");
                }
                if (cfg.seeds.empty())
                    ctx.fail("/seeds", "at least one seed is required");
            }

            top.get("out", cfg.out);
            return cfg;
        }
    }

    tape::SplitIndices SplitConfig::resolve(const tape::ReturnTape &tape) const
    {
        if (dates)
            return tape::split(tape, *dates);
        const std::size_t T = tape.days();
        const auto a = static_cast<std::size_t>(train_fraction * static_cast<double>(T));
        const auto b = static_cast<std::size_t>((train_fraction + valid_fraction) * static_cast<double>(T));
        tape::SplitIndices s;
        s.train = {0, a};
        s.valid = {a, b};
        s.test = {b, T};
        if (s.train.size() == 0 || s.test.size() < 2)
            throw DataError("split fractions leave an empty train or test segment");
        return s;
    }

    nlohmann::json RunConfig::to_json() const
    {
        json tj;
        if (tape.synthetic)
        {
            const auto &s = *tape.synthetic;
            json regimes = json::array();
            for (const auto &r : s.regimes)
            {
                json cov = json::array();
                for (Eigen::Index i = 0; i < r.covariance.rows(); ++i)
                {
                    const Vec row = r.covariance.row(i).transpose();
                    cov.push_back(std::vector<double>(row.data(), row.data() + row.size()));
                }
                regimes.push_back({{"mean", std::vector<double>(r.mean.data(), r.mean.data() + r.mean.size())},
                                   {"covariance", cov},
                                   {"expected_duration", r.expected_duration}});
            }
            json schedule = json::array(), anomalies = json::array();
            for (const auto &f : s.schedule)
                schedule.push_back({{"start", f.start}, {"length", f.length}, {"regime", f.regime}});
            for (const auto &a : s.anomalies)
                anomalies.push_back({{"start", a.start}, {"length", a.length}, {"macro_shift", a.macro_shift}, {"return_shift", a.return_shift}});
            json sj{{"n_assets", s.n_assets}, {"n_days", s.n_days}, {"regimes", regimes}, {"macro_noise", s.macro_noise},
                    {"extra_macro", s.extra_macro}, {"schedule", schedule}, {"anomalies", anomalies}, {"start_date", s.start_date}};
            if (tape.synthetic_seed_fixed)
                sj["seed"] = s.seed;
            tj["synthetic"] = sj;
        }
        else
        {
            tj["path"] = tape.path;
            tj["date_column"] = tape.schema.date_column;
            tj["asset_columns"] = tape.schema.asset_columns;
            tj["macro_prefix"] = tape.schema.macro_prefix;
            tj["min_rows"] = tape.schema.min_rows;
        }

        json uj = json::array();
        for (const auto &u : universes)
            uj.push_back({{"name", u.name}, {"assets", u.asset_ids}, {"category", tape::to_string(u.category)}});

        json sp;
        if (split.dates)
        {
            sp = {{"train_end", tape::format_date(split.dates->train_end)},
                  {"valid_end", tape::format_date(split.dates->valid_end)},
                  {"test_end", tape::format_date(split.dates->test_end)}};
        }
        else
        {
            sp = {{"train_fraction", split.train_fraction}, {"valid_fraction", split.valid_fraction}};
        }

        json scr_j{{"k", scr.k}, {"samples", scr.samples}, {"q_shock", scr.q_shock}, {"chi_lookback", scr.chi_lookback},
                   {"vol_window", scr.vol_window}, {"fit_window", scr.fit_window}, {"ridge", scr.ridge}, {"horizon", scr.horizon},
                   {"var_ridge", scr.var_ridge}, {"embedding_window", scr.embedding.window}, {"embedding_dim", scr.embedding.dim},
                   {"gate_window", scr.gate.window}, {"gate_quantile", scr.gate.quantile}, {"gate_alpha", scr.gate.alpha},
                   {"gate_min", scr.gate.g_min}};
        if (scr.lambda_sq)
            scr_j["lambda_sq"] = *scr.lambda_sq;

        json env_j{{"lo", env.constraints.lo}, {"hi", env.constraints.hi}, {"turnover_cap", env.constraints.turnover_cap},
                   {"cost_rate", env.cost_rate}, {"ewma_decay", env.ewma_decay}, {"eta", reward.eta},
                   {"lambda_rho", reward.lambda_rho}, {"lambda_conc", reward.lambda_conc}};

        json agent_j;
        const json full = agent.to_json();
        for (const auto &k : agent_keys())
            agent_j[k] = full.at(k);

        return {{"tape", tj},
                {"universes", uj},
                {"split", sp},
                {"scr", scr_j},
                {"env", env_j},
                {"agent", agent_j},
                {"allocator", {{"lookback", allocator.lookback}, {"risk_aversion", allocator.risk_aversion}}},
                {"strategy", strategies},
                {"seeds", seeds},
                {"out", out}};
    }

    RunConfig parse_run_config(std::string_view text, const std::string &source)
    {
        Context ctx;
        ctx.source = source;
        json root;
        try
        {
            root = json::parse(text);
        }
        catch (const json::parse_error &e)
        {
            const std::size_t upto = std::min(e.byte, text.size());
            const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto > 0 ? upto - 1 : 0), '\n'));
            throw ConfigError(fmt::format("{}:{}: invalid JSON: {}", source, line, e.what()));
        }
        std::size_t line = 1;
        KeyLineRecorder rec(&line);
        json::sax_parse(LineCountingIterator(text.data(), &line), LineCountingIterator(text.data() + text.size(), &line), &rec);
        ctx.lines = std::move(rec.lines);

        RunConfig cfg = parse(root, ctx);
        // every RL strategy's derived configuration must validate before any work starts
        for (const auto &name : cfg.strategies)
        {
            if (is_rl_strategy(name))
            {
                try
                {
                    strategy_train_config(cfg, name, cfg.seeds.front()).validate();
                }
                catch (const ConfigError &e)
                {
                    ctx.fail(root.contains("agent") ? "/agent" : "", e.what());
                }
            }
        }
        return cfg;
    }

    RunConfig load_run_config(const std::string &path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw ConfigError("cannot open config file '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse_run_config(ss.str(), path);
    }

    RunConfig run_config_from_json(const nlohmann::json &j)
    {
        return parse_run_config(j.dump(2), "<json>");
    }

    std::string sha256_hex(std::string_view data)
    {
        unsigned char digest[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
            throw Error("SHA-256 failed");
        std::string out;
        for (unsigned int i = 0; i < len; ++i)
            out += fmt::format("{:02x}", digest[i]);
        return out;
    }

    std::string config_hash(const RunConfig &cfg)
    {
        return sha256_hex(cfg.to_json().dump());
    }

    std::vector<std::string> strategy_names()
    {
        return {"1/N", "markowitz", "inverse_vol", "gmv_lw", "ppo_replay", "bootrollout_ppo", "scr_ppo_reward_only",
                "scr_ppo_nocf", "scr_ppo_full"};
    }

    bool is_rl_strategy(const std::string &name)
    {
        return name == "ppo_replay" || name == "bootrollout_ppo" || name.rfind("scr_ppo", 0) == 0;
    }

    agent::TrainConfig strategy_train_config(const RunConfig &cfg, const std::string &strategy, std::uint64_t seed)
    {
        agent::TrainConfig base = cfg.agent;
        base.seed = seed;
        base.samples = cfg.scr.samples;
        base.reward = cfg.reward;
        base.reward.cost_rate = cfg.env.cost_rate;
        for (auto &c : baselines::baseline_rl_configs(base))
        {
            if (c.name == strategy)
                return c;
        }
        throw ConfigError("'" + strategy + "' is not a trainable strategy");
    }

    nlohmann::json RunManifest::to_json() const
    {
        return {{"config_hash", config_hash}, {"code_version", code_version}, {"command", command}, {"seeds", seeds},
                {"started", started}, {"finished", finished}, {"files", files}};
    }

    std::string utc_timestamp()
    {
        const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
        return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", now);
    }

    std::vector<std::string> list_files(const std::string &dir, const std::string &exclude)
    {
        namespace fs = std::filesystem;
        std::vector<std::string> out;
        if (!fs::exists(dir))
            return out;
        for (const auto &e : fs::recursive_directory_iterator(dir))
        {
            if (!e.is_regular_file())
                continue;
            const auto rel = fs::relative(e.path(), dir).generic_string();
            if (rel != exclude)
                out.push_back(rel);
        }
        std::sort(out.begin(), out.end());
        return out;
    }
}
