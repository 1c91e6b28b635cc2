#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace adjustkit {

enum class CovariateKind { Categorical, Continuous };
enum class OutcomeType { Binary, Continuous };

struct CovariateEntry {
  std::string name;
  CovariateKind kind = CovariateKind::Continuous;
  /// Ordered level labels for categoricals; the first is the reference.
  std::vector<std::string> levels;
};

class CovariateSchema {
 public:
  CovariateSchema() = default;
  explicit CovariateSchema(std::vector<CovariateEntry> entries);

  const std::vector<CovariateEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const CovariateEntry* find(std::string_view name) const;
  std::optional<std::size_t> index_of(std::string_view name) const;

 private:
  std::vector<CovariateEntry> entries_;
};

// Randomisation schemes.
struct SimpleRandomisation {
  double allocation = 0.5;  // P(Z = 1)
};
struct StratifiedBlocks {
  std::vector<std::string> strata;
  int block_size = 4;
};
struct Minimisation {
  std::vector<std::string> factors;
  std::vector<double> weights;  // empty => equal weights
  double favoured_probability = 0.8;
};
using DesignInfo = std::variant<SimpleRandomisation, StratifiedBlocks, Minimisation>;

/// Throws InvalidArgument if the scheme parameters are out of range.
void validate(const DesignInfo& design);
std::string describe(const DesignInfo& design);
/// {"scheme": "simple" | "stratified_blocks" | "minimisation", ...}
DesignInfo design_from_json(const nlohmann::json& j);
nlohmann::json design_to_json(const DesignInfo& design);

/// Whether rows were dropped for missingness somewhere upstream.
enum class Provenance { AllRandomised, CompleteCase };

/// Record of single-imputation style edits, consumed by estimand validation.
struct ImputationAudit {
  std::map<std::string, std::vector<bool>> imputed_cells;
  std::vector<std::string> indicator_columns;
  std::vector<std::string> removable_columns;  // constant indicators
};

/// Immutable trial dataset stored column-wise. Categorical covariate values
/// are level indices into the schema entry's level list.
class TrialDataset {
 public:
  using Cell = std::optional<double>;
  using Column = std::vector<Cell>;

  TrialDataset(std::vector<std::string> ids, std::vector<int> treat, Column outcome,
               OutcomeType outcome_type, CovariateSchema schema, std::vector<Column> covariates,
               DesignInfo design = SimpleRandomisation{},
               Provenance provenance = Provenance::AllRandomised, ImputationAudit audit = {});

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<int>& treat() const { return treat_; }
  const Column& outcome() const { return outcome_; }
  OutcomeType outcome_type() const { return outcome_type_; }
  const CovariateSchema& schema() const { return schema_; }
  const DesignInfo& design() const { return design_; }
  Provenance provenance() const { return provenance_; }
  const ImputationAudit& audit() const { return audit_; }

  /// Throws UnknownTerm if `name` is not a declared covariate.
  const Column& column(std::string_view name) const;
  const Column& column(std::size_t index) const { return covariates_[index]; }
  const std::vector<Column>& columns() const { return covariates_; }

  /// Level label for a categorical cell; the numeric text otherwise.
  std::optional<std::string> cell_text(std::size_t row, std::size_t column) const;

  std::size_t observed_outcomes() const;
  std::size_t missing_cells() const;
  std::size_t arm_size(int arm) const;
  bool has_missing_outcome() const;

  // Derived datasets; the receiver is never modified.
  TrialDataset subset(std::span<const std::size_t> rows) const;
  TrialDataset with_treatment(int arm) const;
  TrialDataset with_outcome(Column outcome) const;
  TrialDataset with_column(CovariateEntry entry, Column values) const;
  TrialDataset with_design(DesignInfo design) const;
  TrialDataset with_provenance(Provenance provenance) const;
  TrialDataset with_audit(ImputationAudit audit) const;

 private:
  std::vector<std::string> ids_;
  std::vector<int> treat_;
  Column outcome_;
  OutcomeType outcome_type_;
  CovariateSchema schema_;
  std::vector<Column> covariates_;
  DesignInfo design_;
  Provenance provenance_;
  ImputationAudit audit_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

struct CovariateDecl {
  std::string column;
  CovariateKind kind = CovariateKind::Continuous;
  std::vector<std::string> levels;  // empty => accumulate in order of appearance
};

/// Column-role declaration for a CSV file.
struct SchemaConfig {
  std::string id_column;  // empty => row numbers
  std::string treat_column = "treat";
  std::string outcome_column = "outcome";
  OutcomeType outcome_type = OutcomeType::Binary;
  std::vector<CovariateDecl> covariates;
  DesignInfo design = SimpleRandomisation{};
};

SchemaConfig schema_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SchemaConfig& config);
SchemaConfig load_schema_config(const std::filesystem::path& path);

TrialDataset read_csv(std::istream& in, const SchemaConfig& config);
TrialDataset load_csv(const std::filesystem::path& path, const SchemaConfig& config);

/// Writes id, treat, outcome and covariate columns; numbers use the shortest
/// representation that parses back to the same double.
void write_csv(std::ostream& out, const TrialDataset& dataset, const SchemaConfig& config,
               std::string_view missing_token = "NA");

/// Rows with every listed variable observed ("outcome" names the outcome).
/// Order is preserved and the result is flagged complete-case.
TrialDataset complete_cases(const TrialDataset& dataset, std::span<const std::string> vars);

// ---------------------------------------------------------------------------
// Model terms and design matrices

struct Term {
  enum class Kind { Intercept, Treatment, Main, TreatmentInteraction };
  Kind kind = Kind::Intercept;
  std::string variable;

  static Term intercept() { return {Kind::Intercept, {}}; }
  static Term treatment() { return {Kind::Treatment, {}}; }
  static Term main(std::string var) { return {Kind::Main, std::move(var)}; }
  static Term by_treatment(std::string var) { return {Kind::TreatmentInteraction, std::move(var)}; }

  std::string label() const;
  bool operator==(const Term&) const = default;
};

/// "1" (intercept), "treat", "x" (main effect) and "treat:x" (interaction).
Term parse_term(std::string_view text);
std::vector<Term> parse_terms(std::span<const std::string> texts);
std::vector<std::string> term_variables(std::span<const Term> terms);

/// Column layout for a term list, pinned to the level sets of one dataset so
/// that other datasets can be encoded the same way.
struct DesignLayout {
  std::vector<Term> terms;
  std::map<std::string, CovariateEntry> variables;
  std::vector<std::string> labels;
};

DesignLayout make_layout(const TrialDataset& dataset, std::span<const Term> terms);

struct DesignMatrix {
  Eigen::MatrixXd x;
  std::vector<std::string> labels;
  std::vector<std::size_t> rows;      // dataset row for each matrix row
  std::vector<std::size_t> excluded;  // rows with a referenced value missing
};

DesignMatrix design_matrix(const TrialDataset& dataset, std::span<const Term> terms);
/// Throws UnseenLevel when a categorical level is not part of the layout.
DesignMatrix design_matrix(const TrialDataset& dataset, const DesignLayout& layout);

}  // namespace adjustkit
