#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "mpmdse/llm4dse.hpp"

namespace mpmdse::dse {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string join_values(const std::vector<std::string>& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += " | ";
    out += v;
  }
  return out;
}

std::string inline_config(const DesignSpace& space, const DesignConfiguration& cfg) {
  std::string out;
  for (std::size_t i = 0; i < space.num_directives(); ++i) {
    if (i) out += ", ";
    out += space.directive(i).name + "=" + space.directive(i).domain[cfg.indices[i]];
  }
  return out;
}

std::string impact_rules() {
  return std::string("- ") + kPipelineKnowledge +
         "\n"
         "- Larger unroll factors reduce latency and increase LUT, FF and DSP usage.\n"
         "- Larger array_partition factors remove memory-port stalls, lowering latency, and increase LUT, FF and "
         "BRAM usage.\n"
         "- Larger tile factors add loop-control overhead to latency and LUT usage.\n"
         "- A factor of 1, or \"off\" for pipeline, disables the directive.\n";
}

std::string describe_direction(const PragmaDirective& d, bool raise) {
  if (d.kind == PragmaKind::tile) {
    return raise ? "adds control overhead, so it is only worth it when it unlocks other changes"
                 : "removes control overhead and lowers both latency and LUT usage";
  }
  return raise ? "should lower latency and raise resource usage" : "should lower resource usage and raise latency";
}

}  // namespace

std::string_view to_string(PromptMode m) {
  switch (m) {
    case PromptMode::peodse: return "peodse";
    case PromptMode::zero_shot: return "zero_shot";
    case PromptMode::few_shot: return "few_shot";
    case PromptMode::instruction_only: return "instruction_only";
  }
  return "peodse";
}

PromptMode parse_prompt_mode(std::string_view text) {
  for (auto m : {PromptMode::peodse, PromptMode::zero_shot, PromptMode::few_shot, PromptMode::instruction_only}) {
    if (text == to_string(m)) return m;
  }
  throw ValidationError("prompt_mode", "unknown prompt mode '" + std::string(text) + "'");
}

std::string PeodsePrompt::render() const {
  std::string out;
  auto section = [&](const char* header, const std::string& body) {
    if (body.empty()) return;
    out += header;
    out += "\n\n";
    out += body;
    if (body.back() != '\n') out += '\n';
    out += '\n';
  };
  section(kTaskDescriptionHeader, task_description);
  section(kExamplesHeader, examples);
  section(kInstructionHeader, task_instruction);
  section(kExemplarHeader, generation_exemplars);
  out += request;
  if (!request.empty() && request.back() != '\n') out += '\n';
  return out;
}

std::vector<ExampleSolution> select_examples(const std::vector<ExampleSolution>& archive, std::size_t k) {
  std::vector<ExampleSolution> sorted = archive;
  std::sort(sorted.begin(), sorted.end(), [](const ExampleSolution& a, const ExampleSolution& b) {
    if (a.utilization != b.utilization) return a.utilization < b.utilization;
    if (a.metrics.latency != b.metrics.latency) return a.metrics.latency < b.metrics.latency;
    return a.config < b.config;
  });
  std::vector<ExampleSolution> distinct;
  for (const auto& e : sorted) {
    if (!distinct.empty() && distinct.back().utilization == e.utilization &&
        distinct.back().metrics.latency == e.metrics.latency) {
      continue;
    }
    distinct.push_back(e);
  }
  sorted = std::move(distinct);
  if (k == 0 || sorted.size() <= k) return sorted;
  std::vector<ExampleSolution> out;
  const auto n = sorted.size();
  for (std::size_t i = 0; i < k; ++i) {
    const auto idx = k == 1 ? 0 : (i * (n - 1) + (k - 1) / 2) / (k - 1);
    out.push_back(sorted[idx]);
  }
  return out;
}

PeodsePrompt build_prompt(const DesignSpace& space, const std::string& kernel_id,
                          const std::vector<ExampleSolution>& archive, const PromptOptions& opts) {
  if (space.num_directives() == 0) throw ValidationError("space", "cannot prompt for an empty design space");
  if (opts.k == 0) throw ValidationError("k", "example count must be at least 1");
  if (opts.batch == 0) throw ValidationError("batch", "batch size must be at least 1");
  const bool knowledge = opts.mode == PromptMode::peodse || opts.mode == PromptMode::instruction_only;
  const bool with_examples = opts.mode == PromptMode::peodse || opts.mode == PromptMode::few_shot;

  PeodsePrompt p;
  std::ostringstream desc;
  desc << "You are an expert in FPGA high-level synthesis. The goal is to find pragma configurations for kernel `"
       << kernel_id
       << "` that are Pareto-optimal in two minimized objectives: latency in clock cycles and maximum resource "
          "utilization, the largest of the LUT, DSP, FF and BRAM usage fractions.\n\n"
       << "Directive catalog (name [kind, target]: admissible values):\n";
  for (const auto& d : space.directives()) {
    desc << "- " << d.name << " [" << to_string(d.kind) << ", " << d.target << "]: " << join_values(d.domain) << '\n';
  }
  if (knowledge) desc << "\nPragma impact on QoR:\n" << impact_rules();
  p.task_description = desc.str();

  const auto examples = select_examples(archive, opts.k);
  if (with_examples) {
    if (examples.empty()) {
      p.examples = "None yet. No configuration has been evaluated so far.\n";
    } else {
      std::ostringstream ex;
      ex << "Current best trade-offs, ordered by maximum utilization and then latency:\n";
      for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& e = examples[i];
        ex << "\nExample " << i + 1 << ": latency = " << e.metrics.latency
           << " cycles, max utilization = " << fixed(e.utilization, 4) << "\n```\n"
           << format_config(space, e.config) << "```\n";
      }
      p.examples = ex.str();
    }
  }

  if (knowledge) {
    std::ostringstream ins;
    ins << "Generate new configurations that are likely to extend or improve the Pareto front.\n"
        << "1. Use only the directive names and values from the catalog and assign every directive exactly once.\n"
        << "2. Do not repeat a configuration that is shown above.\n"
        << "3. Apply the pragma impact rules when choosing values:\n"
        << impact_rules()
        << "4. Mix the proposals: some should lower latency at a resource cost and some should lower utilization "
           "at a latency cost.\n"
        << "5. Change one or two directives of a good configuration at a time so the effect of each change stays "
           "predictable.\n";
    p.task_instruction = ins.str();
  }

  if (opts.mode == PromptMode::peodse) {
    DesignConfiguration base = examples.empty() ? space.disabled() : examples.front().config;
    std::ostringstream cot;
    cot << "Step 1: Start from ";
    if (examples.empty()) {
      cot << "the configuration with every directive disabled: " << inline_config(space, base) << ".\n";
    } else {
      cot << "the example with the lowest utilization: " << inline_config(space, base) << " (latency "
          << examples.front().metrics.latency << " cycles, max utilization " << fixed(examples.front().utilization, 4)
          << ").\n";
    }
    std::optional<std::size_t> raised;
    for (std::size_t i = 0; i < space.num_directives(); ++i) {
      const auto& d = space.directive(i);
      if (d.kind != PragmaKind::tile && base.indices[i] + 1 < d.domain.size()) {
        raised = i;
        break;
      }
    }
    auto next = base;
    int step = 2;
    if (raised) {
      const auto& d = space.directive(*raised);
      next.indices[*raised] += 1;
      const char* article = d.kind == PragmaKind::array_partition ? " is an " : " is a ";
      cot << "Step " << step++ << ": " << d.name << article << to_string(d.kind) << " directive at "
          << d.domain[base.indices[*raised]] << ". Raising it to " << d.domain[next.indices[*raised]] << ' '
          << describe_direction(d, true) << ".\n";
    }
    for (std::size_t i = space.num_directives(); i-- > 0;) {
      if (raised && i == *raised) continue;
      const auto& d = space.directive(i);
      if (next.indices[i] > 0) {
        cot << "Step " << step++ << ": To keep utilization in check, lower " << d.name << " from "
            << d.domain[next.indices[i]] << " to " << d.domain[next.indices[i] - 1] << ", which "
            << describe_direction(d, false) << ".\n";
        next.indices[i] -= 1;
        break;
      }
    }
    cot << "Step " << step << ": Check every value against the catalog and write the result as one block:\n```\n"
        << format_config(space, next) << "```\n";
    p.generation_exemplars = cot.str();
  }

  p.request = "Propose exactly " + std::to_string(opts.batch) +
              " new configurations. Write them inside one fenced code block with one `name=value` line per "
              "directive, and separate consecutive configurations with a line containing only `---`.\n";
  return p;
}

std::string format_config(const DesignSpace& space, const DesignConfiguration& cfg) {
  std::string out;
  for (std::size_t i = 0; i < space.num_directives(); ++i) {
    out += space.directive(i).name + "=" + space.directive(i).domain.at(cfg.indices.at(i)) + "\n";
  }
  return out;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

ParseResult parse_solutions(const std::string& text, const DesignSpace& space, std::size_t batch,
                            const std::set<DesignConfiguration>& evaluated) {
  ParseResult r;
  std::set<DesignConfiguration> seen;
  std::vector<std::pair<std::size_t, std::string>> group;
  std::size_t block = 0;

  auto flush = [&]() {
    if (group.empty()) return;
    const auto where = "block " + std::to_string(block) + " line " + std::to_string(group.front().first);
    std::map<std::string, std::string> assignment;
    std::string problem;
    for (const auto& [lineno, line] : group) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        problem = "line " + std::to_string(lineno) + " is not `name=value`";
        break;
      }
      const auto name = trim(std::string_view(line).substr(0, eq));
      const auto value = trim(std::string_view(line).substr(eq + 1));
      if (!assignment.emplace(name, value).second) {
        problem = "directive " + name + " assigned twice";
        break;
      }
    }
    group.clear();
    DesignConfiguration cfg;
    if (problem.empty()) {
      cfg.indices.assign(space.num_directives(), 0);
      for (const auto& [name, value] : assignment) {
        const auto idx = space.index_of(name);
        if (!idx) {
          problem = "unknown directive " + name;
          break;
        }
        const auto v = space.directive(*idx).find_value(value);
        if (!v) {
          problem = "value " + name + "=" + value + " is outside the domain {" +
                    join_values(space.directive(*idx).domain) + "}";
          break;
        }
        cfg.indices[*idx] = static_cast<std::uint32_t>(*v);
      }
    }
    if (problem.empty() && assignment.size() != space.num_directives()) {
      for (const auto& d : space.directives()) {
        if (!assignment.contains(d.name)) {
          problem = "missing directive " + d.name;
          break;
        }
      }
    }
    if (problem.empty() && evaluated.contains(cfg)) problem = "configuration " + cfg.key() + " was already evaluated";
    if (problem.empty() && seen.contains(cfg)) problem = "configuration " + cfg.key() + " repeated";
    if (problem.empty() && r.configs.size() >= batch) problem = "more than " + std::to_string(batch) + " configurations";
    if (!problem.empty()) {
      r.diagnostics.push_back(where + ": dropped, " + problem);
      return;
    }
    seen.insert(cfg);
    r.configs.push_back(std::move(cfg));
  };

  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  bool inside = false;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = trim(raw);
    if (line.rfind("```", 0) == 0) {
      if (inside) flush();
      inside = !inside;
      if (inside) ++block;
      continue;
    }
    if (!inside) continue;
    if (line.empty() || line == "---") {
      flush();
      continue;
    }
    group.emplace_back(lineno, line);
  }
  if (inside) {
    r.diagnostics.push_back("block " + std::to_string(block) + ": unterminated fence");
    flush();
  }
  return r;
}

}  // namespace mpmdse::dse
