// Writes a synthetic corpus (embeddings, captions, queries) for demos and tests.

#include <iostream>

#include "CLI11.hpp"

#include "caplevel/fixture.hpp"

int main(int argc, char** argv) {
  CLI::App app{"caplevel-fixture: synthetic caption corpus generator"};
  caplevel::FixtureSpec spec;
  std::string out_dir;
  app.add_option("--images", spec.images, "Number of images")->check(CLI::PositiveNumber);
  app.add_option("--candidates", spec.candidates, "Captions per image")->check(CLI::PositiveNumber);
  app.add_option("--dim", spec.dim, "Embedding dimension")->check(CLI::PositiveNumber);
  app.add_option("--degenerate", spec.degenerate_images,
                 "Trailing images whose query is orthogonal to all candidates");
  app.add_option("--seed", spec.seed, "Generator seed");
  app.add_option("--out-dir", out_dir, "Output directory")->required();
  CLI11_PARSE(app, argc, argv);

  if (spec.degenerate_images > spec.images) {
    std::cerr << "--degenerate exceeds --images\n";
    return 2;
  }
  try {
    const auto paths = caplevel::write_fixture(caplevel::make_fixture(spec), out_dir);
    std::cout << paths.embeddings.string() << '\n'
              << paths.captions.string() << '\n'
              << paths.queries.string() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "caplevel-fixture: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
