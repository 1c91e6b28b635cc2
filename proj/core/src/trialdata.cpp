#include "adjustkit/trialdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adjustkit/error.hpp"

namespace adjustkit {

namespace {

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool is_missing_token(std::string_view s) { return s.empty() || s == "NA"; }

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

// RFC-4180 records: quoted fields may contain separators, doubled quotes and
// line breaks.
std::vector<std::vector<std::string>> parse_records(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t i = 0;
  if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record.front().empty())) records.push_back(std::move(record));
    record.clear();
  };
  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_record();
    } else if (c == '\r') {
      // swallowed; CRLF handled by the following '\n'
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) throw Error(ErrorCode::ParseError, "unterminated quoted field");
  if (!field.empty() || !record.empty()) end_record();
  return records;
}

std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}


}  // namespace

DesignInfo design_from_json(const nlohmann::json& j) {
  const std::string scheme = j.value("scheme", "simple");
  if (scheme == "simple") return SimpleRandomisation{j.value("allocation", 0.5)};
  if (scheme == "stratified_blocks") {
    return StratifiedBlocks{j.value("strata", std::vector<std::string>{}), j.value("block_size", 4)};
  }
  if (scheme == "minimisation") {
    return Minimisation{j.value("factors", std::vector<std::string>{}),
                        j.value("weights", std::vector<double>{}),
                        j.value("favoured_probability", 0.8)};
  }
  throw Error(ErrorCode::ConfigError, "unknown randomisation scheme '" + scheme + "'");
}

nlohmann::json design_to_json(const DesignInfo& design) {
  return std::visit(
      [](const auto& d) -> nlohmann::json {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, SimpleRandomisation>) {
          return {{"scheme", "simple"}, {"allocation", d.allocation}};
        } else if constexpr (std::is_same_v<T, StratifiedBlocks>) {
          return {{"scheme", "stratified_blocks"}, {"strata", d.strata}, {"block_size", d.block_size}};
        } else {
          return {{"scheme", "minimisation"},
                  {"factors", d.factors},
                  {"weights", d.weights},
                  {"favoured_probability", d.favoured_probability}};
        }
      },
      design);
}

// ---------------------------------------------------------------------------

CovariateSchema::CovariateSchema(std::vector<CovariateEntry> entries) : entries_(std::move(entries)) {
  std::set<std::string> seen;
  for (const auto& e : entries_) {
    if (e.name.empty()) throw Error(ErrorCode::InvalidArgument, "covariate with empty name");
    if (e.name == "treat" || e.name == "outcome") {
      throw Error(ErrorCode::InvalidArgument, "covariate name '" + e.name + "' is reserved");
    }
    if (!seen.insert(e.name).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate covariate '" + e.name + "'");
    }
  }
}

const CovariateEntry* CovariateSchema::find(std::string_view name) const {
  auto idx = index_of(name);
  return idx ? &entries_[*idx] : nullptr;
}

std::optional<std::size_t> CovariateSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

void validate(const DesignInfo& design) {
  std::visit(
      [](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, SimpleRandomisation>) {
          if (!(d.allocation > 0.0 && d.allocation < 1.0)) {
            throw Error(ErrorCode::InvalidArgument, "allocation probability must lie in (0,1)");
          }
        } else if constexpr (std::is_same_v<T, StratifiedBlocks>) {
          if (d.block_size <= 0 || d.block_size % 2 != 0) {
            throw Error(ErrorCode::InvalidArgument, "block size must be a positive multiple of 2");
          }
        } else {
          if (!(d.favoured_probability >= 0.5 && d.favoured_probability < 1.0)) {
            throw Error(ErrorCode::InvalidArgument, "favoured-arm probability must lie in [0.5,1)");
          }
          if (!d.weights.empty() && d.weights.size() != d.factors.size()) {
            throw Error(ErrorCode::InvalidArgument, "one minimisation weight per factor required");
          }
          for (double w : d.weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) {
              throw Error(ErrorCode::InvalidArgument, "minimisation weights must be finite and >= 0");
            }
          }
        }
      },
      design);
}

std::string describe(const DesignInfo& design) { return design_to_json(design).dump(); }

// ---------------------------------------------------------------------------

TrialDataset::TrialDataset(std::vector<std::string> ids, std::vector<int> treat, Column outcome,
                           OutcomeType outcome_type, CovariateSchema schema,
                           std::vector<Column> covariates, DesignInfo design,
                           Provenance provenance, ImputationAudit audit)
    : ids_(std::move(ids)),
      treat_(std::move(treat)),
      outcome_(std::move(outcome)),
      outcome_type_(outcome_type),
      schema_(std::move(schema)),
      covariates_(std::move(covariates)),
      design_(std::move(design)),
      provenance_(provenance),
      audit_(std::move(audit)) {
  const std::size_t n = ids_.size();
  if (n == 0) throw Error(ErrorCode::EmptyDataset, "dataset has no rows");
  if (treat_.size() != n || outcome_.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "column lengths differ");
  }
  if (covariates_.size() != schema_.size()) {
    throw Error(ErrorCode::InvalidArgument, "covariate columns do not match schema");
  }
  for (int z : treat_) {
    if (z != 0 && z != 1) throw Error(ErrorCode::BadTreatValue, "treatment must be 0 or 1");
  }
  for (const auto& y : outcome_) {
    if (!y) continue;
    if (!std::isfinite(*y)) throw Error(ErrorCode::ParseError, "non-finite outcome");
    if (outcome_type_ == OutcomeType::Binary && *y != 0.0 && *y != 1.0) {
      throw Error(ErrorCode::ParseError, "binary outcome must be 0 or 1");
    }
  }
  for (std::size_t c = 0; c < covariates_.size(); ++c) {
    const auto& entry = schema_.entries()[c];
    if (covariates_[c].size() != n) throw Error(ErrorCode::InvalidArgument, "column lengths differ");
    for (const auto& v : covariates_[c]) {
      if (!v) continue;
      if (!std::isfinite(*v)) throw Error(ErrorCode::ParseError, "non-finite value in " + entry.name);
      if (entry.kind == CovariateKind::Categorical) {
        const double idx = *v;
        if (idx < 0 || idx >= static_cast<double>(entry.levels.size()) || idx != std::floor(idx)) {
          throw Error(ErrorCode::ParseError, "level index out of range in " + entry.name);
        }
      }
    }
  }
  validate(design_);
}

const TrialDataset::Column& TrialDataset::column(std::string_view name) const {
  auto idx = schema_.index_of(name);
  if (!idx) throw Error(ErrorCode::UnknownTerm, "unknown variable '" + std::string(name) + "'");
  return covariates_[*idx];
}

std::optional<std::string> TrialDataset::cell_text(std::size_t row, std::size_t column) const {
  const auto& v = covariates_[column][row];
  if (!v) return std::nullopt;
  const auto& entry = schema_.entries()[column];
  if (entry.kind == CovariateKind::Categorical) return entry.levels[static_cast<std::size_t>(*v)];
  return format_number(*v);
}

std::size_t TrialDataset::observed_outcomes() const {
  return static_cast<std::size_t>(
      std::count_if(outcome_.begin(), outcome_.end(), [](const Cell& c) { return c.has_value(); }));
}

std::size_t TrialDataset::missing_cells() const {
  std::size_t missing = size() - observed_outcomes();
  for (const auto& col : covariates_) {
    missing += static_cast<std::size_t>(
        std::count_if(col.begin(), col.end(), [](const Cell& c) { return !c.has_value(); }));
  }
  return missing;
}

std::size_t TrialDataset::arm_size(int arm) const {
  return static_cast<std::size_t>(std::count(treat_.begin(), treat_.end(), arm));
}

bool TrialDataset::has_missing_outcome() const { return observed_outcomes() < size(); }

TrialDataset TrialDataset::subset(std::span<const std::size_t> rows) const {
  std::vector<std::string> ids;
  std::vector<int> treat;
  Column outcome;
  std::vector<Column> covs(covariates_.size());
  ids.reserve(rows.size());
  treat.reserve(rows.size());
  outcome.reserve(rows.size());
  for (auto& c : covs) c.reserve(rows.size());
  for (std::size_t r : rows) {
    ids.push_back(ids_.at(r));
    treat.push_back(treat_[r]);
    outcome.push_back(outcome_[r]);
    for (std::size_t c = 0; c < covs.size(); ++c) covs[c].push_back(covariates_[c][r]);
  }
  ImputationAudit audit = audit_;
  for (auto& [name, flags] : audit.imputed_cells) {
    std::vector<bool> kept;
    kept.reserve(rows.size());
    for (std::size_t r : rows) kept.push_back(flags[r]);
    flags = std::move(kept);
  }
  return TrialDataset(std::move(ids), std::move(treat), std::move(outcome), outcome_type_, schema_,
                      std::move(covs), design_, provenance_, std::move(audit));
}

TrialDataset TrialDataset::with_treatment(int arm) const {
  TrialDataset copy = *this;
  if (arm != 0 && arm != 1) throw Error(ErrorCode::BadTreatValue, "treatment must be 0 or 1");
  std::fill(copy.treat_.begin(), copy.treat_.end(), arm);
  return copy;
}

TrialDataset TrialDataset::with_outcome(Column outcome) const {
  return TrialDataset(ids_, treat_, std::move(outcome), outcome_type_, schema_, covariates_, design_,
                      provenance_, audit_);
}

TrialDataset TrialDataset::with_column(CovariateEntry entry, Column values) const {
  std::vector<CovariateEntry> entries = schema_.entries();
  std::vector<Column> covs = covariates_;
  if (auto idx = schema_.index_of(entry.name)) {
    entries[*idx] = std::move(entry);
    covs[*idx] = std::move(values);
  } else {
    entries.push_back(std::move(entry));
    covs.push_back(std::move(values));
  }
  return TrialDataset(ids_, treat_, outcome_, outcome_type_, CovariateSchema(std::move(entries)),
                      std::move(covs), design_, provenance_, audit_);
}

TrialDataset TrialDataset::with_design(DesignInfo design) const {
  validate(design);
  TrialDataset copy = *this;
  copy.design_ = std::move(design);
  return copy;
}

TrialDataset TrialDataset::with_provenance(Provenance provenance) const {
  TrialDataset copy = *this;
  copy.provenance_ = provenance;
  return copy;
}

TrialDataset TrialDataset::with_audit(ImputationAudit audit) const {
  TrialDataset copy = *this;
  copy.audit_ = std::move(audit);
  return copy;
}

// ---------------------------------------------------------------------------

SchemaConfig schema_config_from_json(const nlohmann::json& j) {
  try {
    SchemaConfig config;
    config.id_column = j.value("id", std::string{});
    config.treat_column = j.value("treat", std::string{"treat"});
    if (j.contains("outcome")) {
      const auto& o = j.at("outcome");
      if (o.is_string()) {
        config.outcome_column = o.get<std::string>();
      } else {
        config.outcome_column = o.value("column", std::string{"outcome"});
        const std::string type = o.value("type", std::string{"binary"});
        if (type == "binary") config.outcome_type = OutcomeType::Binary;
        else if (type == "continuous") config.outcome_type = OutcomeType::Continuous;
        else throw Error(ErrorCode::ConfigError, "unknown outcome type '" + type + "'");
      }
    }
    for (const auto& c : j.value("covariates", nlohmann::json::array())) {
      CovariateDecl decl;
      decl.column = c.at("column").get<std::string>();
      const std::string kind = c.value("kind", std::string{"continuous"});
      if (kind == "categorical") decl.kind = CovariateKind::Categorical;
      else if (kind == "continuous") decl.kind = CovariateKind::Continuous;
      else throw Error(ErrorCode::ConfigError, "unknown covariate kind '" + kind + "'");
      decl.levels = c.value("levels", std::vector<std::string>{});
      if (decl.kind == CovariateKind::Continuous && !decl.levels.empty()) {
        throw Error(ErrorCode::ConfigError, "continuous covariate '" + decl.column + "' has levels");
      }
      config.covariates.push_back(std::move(decl));
    }
    if (j.contains("design")) config.design = design_from_json(j.at("design"));
    validate(config.design);
    return config;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("schema config: ") + e.what());
  }
}

nlohmann::json to_json(const SchemaConfig& config) {
  nlohmann::json covs = nlohmann::json::array();
  for (const auto& c : config.covariates) {
    nlohmann::json e = {{"column", c.column},
                        {"kind", c.kind == CovariateKind::Categorical ? "categorical" : "continuous"}};
    if (!c.levels.empty()) e["levels"] = c.levels;
    covs.push_back(std::move(e));
  }
  nlohmann::json j = {
      {"treat", config.treat_column},
      {"outcome",
       {{"column", config.outcome_column},
        {"type", config.outcome_type == OutcomeType::Binary ? "binary" : "continuous"}}},
      {"covariates", covs},
      {"design", design_to_json(config.design)}};
  if (!config.id_column.empty()) j["id"] = config.id_column;
  return j;
}

SchemaConfig load_schema_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open schema config " + path.string());
  try {
    return schema_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("schema config: ") + e.what());
  }
}

TrialDataset read_csv(std::istream& in, const SchemaConfig& config) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const auto records = parse_records(text);
  if (records.empty()) throw Error(ErrorCode::EmptyDataset, "CSV has no header row");
  const auto& header = records.front();

  auto column_of = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (trim(header[i]) == name) return i;
    }
    throw Error(ErrorCode::MissingColumn, "column '" + name + "' not in header");
  };
  const std::optional<std::size_t> id_col =
      config.id_column.empty() ? std::nullopt : std::optional(column_of(config.id_column));
  const std::size_t treat_col = column_of(config.treat_column);
  const std::size_t outcome_col = column_of(config.outcome_column);
  std::vector<std::size_t> cov_cols;
  std::vector<CovariateEntry> entries;
  for (const auto& decl : config.covariates) {
    cov_cols.push_back(column_of(decl.column));
    entries.push_back({decl.column, decl.kind, decl.levels});
  }

  const std::size_t n = records.size() - 1;
  if (n == 0) throw Error(ErrorCode::EmptyDataset, "CSV has a header but no data rows");
  std::vector<std::string> ids;
  std::vector<int> treat;
  TrialDataset::Column outcome;
  std::vector<TrialDataset::Column> covs(entries.size());

  for (std::size_t r = 1; r <= n; ++r) {
    const auto& rec = records[r];
    const std::string where = " (data row " + std::to_string(r) + ")";
    if (rec.size() != header.size()) {
      throw Error(ErrorCode::ParseError, "expected " + std::to_string(header.size()) + " fields, got " +
                                             std::to_string(rec.size()) + where);
    }
    ids.push_back(id_col ? std::string(trim(rec[*id_col])) : std::to_string(r));

    const auto z = trim(rec[treat_col]);
    if (z == "0") treat.push_back(0);
    else if (z == "1") treat.push_back(1);
    else throw Error(ErrorCode::BadTreatValue, "treatment value '" + std::string(z) + "'" + where);

    const auto y = trim(rec[outcome_col]);
    if (is_missing_token(y)) {
      outcome.emplace_back();
    } else {
      auto v = parse_double(y);
      if (!v) throw Error(ErrorCode::ParseError, "non-numeric outcome '" + std::string(y) + "'" + where);
      if (config.outcome_type == OutcomeType::Binary && *v != 0.0 && *v != 1.0) {
        throw Error(ErrorCode::ParseError, "binary outcome must be 0 or 1" + where);
      }
      outcome.push_back(*v);
    }

    for (std::size_t c = 0; c < entries.size(); ++c) {
      const auto cell = trim(rec[cov_cols[c]]);
      auto& entry = entries[c];
      if (is_missing_token(cell)) {
        covs[c].emplace_back();
        continue;
      }
      if (entry.kind == CovariateKind::Continuous) {
        auto v = parse_double(cell);
        if (!v) {
          throw Error(ErrorCode::ParseError,
                      "non-numeric value '" + std::string(cell) + "' in " + entry.name + where);
        }
        covs[c].push_back(*v);
        continue;
      }
      auto it = std::find(entry.levels.begin(), entry.levels.end(), cell);
      if (it == entry.levels.end()) {
        if (!config.covariates[c].levels.empty()) {
          throw Error(ErrorCode::UnseenLevel,
                      "undeclared level '" + std::string(cell) + "' in " + entry.name + where);
        }
        entry.levels.emplace_back(cell);
        it = std::prev(entry.levels.end());
      }
      covs[c].push_back(static_cast<double>(std::distance(entry.levels.begin(), it)));
    }
  }
  for (const auto& e : entries) {
    if (e.kind == CovariateKind::Categorical && e.levels.empty()) {
      throw Error(ErrorCode::ParseError, "categorical '" + e.name + "' has no observed levels");
    }
  }
  return TrialDataset(std::move(ids), std::move(treat), std::move(outcome), config.outcome_type,
                      CovariateSchema(std::move(entries)), std::move(covs), config.design);
}

TrialDataset load_csv(const std::filesystem::path& path, const SchemaConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingColumn, "cannot open " + path.string());
  return read_csv(in, config);
}

void write_csv(std::ostream& out, const TrialDataset& dataset, const SchemaConfig& config,
               std::string_view missing_token) {
  const std::string id_name = config.id_column.empty() ? "id" : config.id_column;
  out << csv_escape(id_name) << ',' << csv_escape(config.treat_column) << ','
      << csv_escape(config.outcome_column);
  for (const auto& e : dataset.schema().entries()) out << ',' << csv_escape(e.name);
  out << '\n';
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    out << csv_escape(dataset.ids()[r]) << ',' << dataset.treat()[r] << ',';
    const auto& y = dataset.outcome()[r];
    out << (y ? format_number(*y) : std::string(missing_token));
    for (std::size_t c = 0; c < dataset.schema().size(); ++c) {
      auto text = dataset.cell_text(r, c);
      out << ',' << (text ? csv_escape(*text) : std::string(missing_token));
    }
    out << '\n';
  }
}

TrialDataset complete_cases(const TrialDataset& dataset, std::span<const std::string> vars) {
  std::vector<const TrialDataset::Column*> cols;
  bool need_outcome = false;
  for (const auto& v : vars) {
    if (v == "outcome") need_outcome = true;
    else if (v != "treat") cols.push_back(&dataset.column(v));
  }
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    if (need_outcome && !dataset.outcome()[r]) continue;
    if (std::all_of(cols.begin(), cols.end(), [r](const auto* c) { return (*c)[r].has_value(); })) {
      keep.push_back(r);
    }
  }
  if (keep.empty()) throw Error(ErrorCode::EmptyDataset, "no complete cases");
  if (keep.size() == dataset.size()) {
    return dataset.provenance() == Provenance::CompleteCase
               ? dataset
               : dataset.with_provenance(Provenance::CompleteCase);
  }
  return dataset.subset(keep).with_provenance(Provenance::CompleteCase);
}

// ---------------------------------------------------------------------------

std::string Term::label() const {
  switch (kind) {
    case Kind::Intercept: return "(Intercept)";
    case Kind::Treatment: return "treat";
    case Kind::Main: return variable;
    case Kind::TreatmentInteraction: return "treat:" + variable;
  }
  return {};
}

Term parse_term(std::string_view text) {
  const auto t = trim(text);
  if (t.empty()) throw Error(ErrorCode::UnknownTerm, "empty term");
  if (t == "1" || t == "(Intercept)" || t == "intercept") return Term::intercept();
  if (t == "treat") return Term::treatment();
  if (auto colon = t.find(':'); colon != std::string_view::npos) {
    const auto a = trim(t.substr(0, colon));
    const auto b = trim(t.substr(colon + 1));
    if (a == "treat" && !b.empty() && b != "treat") return Term::by_treatment(std::string(b));
    if (b == "treat" && !a.empty() && a != "treat") return Term::by_treatment(std::string(a));
    throw Error(ErrorCode::UnknownTerm, "only treatment-by-covariate interactions are supported: '" +
                                            std::string(t) + "'");
  }
  return Term::main(std::string(t));
}

std::vector<Term> parse_terms(std::span<const std::string> texts) {
  std::vector<Term> terms;
  for (const auto& s : texts) terms.push_back(parse_term(s));
  return terms;
}

std::vector<std::string> term_variables(std::span<const Term> terms) {
  std::vector<std::string> vars;
  for (const auto& t : terms) {
    if ((t.kind == Term::Kind::Main || t.kind == Term::Kind::TreatmentInteraction) &&
        std::find(vars.begin(), vars.end(), t.variable) == vars.end()) {
      vars.push_back(t.variable);
    }
  }
  return vars;
}

DesignLayout make_layout(const TrialDataset& dataset, std::span<const Term> terms) {
  DesignLayout layout;
  layout.terms.assign(terms.begin(), terms.end());
  for (const auto& t : terms) {
    switch (t.kind) {
      case Term::Kind::Intercept:
      case Term::Kind::Treatment:
        layout.labels.push_back(t.label());
        break;
      case Term::Kind::Main:
      case Term::Kind::TreatmentInteraction: {
        const auto* entry = dataset.schema().find(t.variable);
        if (!entry) throw Error(ErrorCode::UnknownTerm, "unknown variable '" + t.variable + "'");
        layout.variables.emplace(entry->name, *entry);
        const std::string prefix = t.kind == Term::Kind::Main ? "" : "treat:";
        if (entry->kind == CovariateKind::Continuous) {
          layout.labels.push_back(prefix + entry->name);
        } else {
          for (std::size_t l = 1; l < entry->levels.size(); ++l) {
            layout.labels.push_back(prefix + entry->name + "=" + entry->levels[l]);
          }
        }
        break;
      }
    }
  }
  return layout;
}

DesignMatrix design_matrix(const TrialDataset& dataset, std::span<const Term> terms) {
  return design_matrix(dataset, make_layout(dataset, terms));
}

DesignMatrix design_matrix(const TrialDataset& dataset, const DesignLayout& layout) {
  // Per variable: dataset column and, for categoricals, a map from dataset
  // level index to layout level index.
  struct Source {
    const TrialDataset::Column* column = nullptr;
    const CovariateEntry* layout_entry = nullptr;
    std::vector<int> level_map;
  };
  std::map<std::string, Source> sources;
  for (const auto& [name, entry] : layout.variables) {
    const auto* own = dataset.schema().find(name);
    if (!own) throw Error(ErrorCode::UnknownTerm, "variable '" + name + "' absent from dataset");
    if (own->kind != entry.kind) {
      throw Error(ErrorCode::UnknownTerm, "variable '" + name + "' changed kind");
    }
    Source s{&dataset.column(name), &entry, {}};
    if (entry.kind == CovariateKind::Categorical) {
      for (const auto& lvl : own->levels) {
        auto it = std::find(entry.levels.begin(), entry.levels.end(), lvl);
        s.level_map.push_back(it == entry.levels.end()
                                  ? -1
                                  : static_cast<int>(std::distance(entry.levels.begin(), it)));
      }
    }
    sources.emplace(name, std::move(s));
  }

  DesignMatrix dm;
  dm.labels = layout.labels;
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    bool complete = true;
    for (const auto& [name, s] : sources) {
      const auto& cell = (*s.column)[r];
      if (!cell) {
        complete = false;
        break;
      }
      if (s.layout_entry->kind == CovariateKind::Categorical &&
          s.level_map[static_cast<std::size_t>(*cell)] < 0) {
        throw Error(ErrorCode::UnseenLevel,
                    "level '" + dataset.schema().find(name)->levels[static_cast<std::size_t>(*cell)] +
                        "' of '" + name + "' was not present when the model was fitted");
      }
    }
    (complete ? dm.rows : dm.excluded).push_back(r);
  }

  dm.x.resize(static_cast<Eigen::Index>(dm.rows.size()), static_cast<Eigen::Index>(layout.labels.size()));
  for (std::size_t i = 0; i < dm.rows.size(); ++i) {
    const std::size_t r = dm.rows[i];
    const double z = dataset.treat()[r];
    Eigen::Index col = 0;
    const auto row = static_cast<Eigen::Index>(i);
    for (const auto& t : layout.terms) {
      switch (t.kind) {
        case Term::Kind::Intercept: dm.x(row, col++) = 1.0; break;
        case Term::Kind::Treatment: dm.x(row, col++) = z; break;
        case Term::Kind::Main:
        case Term::Kind::TreatmentInteraction: {
          const auto& s = sources.at(t.variable);
          const double scale = t.kind == Term::Kind::Main ? 1.0 : z;
          const double v = *(*s.column)[r];
          if (s.layout_entry->kind == CovariateKind::Continuous) {
            dm.x(row, col++) = scale * v;
          } else {
            const int level = s.level_map[static_cast<std::size_t>(v)];
            const auto n_dummies = static_cast<Eigen::Index>(s.layout_entry->levels.size()) - 1;
            for (Eigen::Index l = 0; l < n_dummies; ++l) {
              dm.x(row, col + l) = (level == l + 1) ? scale : 0.0;
            }
            col += n_dummies;
          }
          break;
        }
      }
    }
  }
  return dm;
}

}  // namespace adjustkit
