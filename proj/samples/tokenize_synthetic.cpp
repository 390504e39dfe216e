// Generates a small synthetic scene, tokenizes it and prints a summary.
//
//   most_sample [seed]

#include <cmath>
#include <cstdlib>
#include <iostream>

#include "most/most.hpp"

int main(int argc, char **argv)
{
    const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 0;

    most::SynthSpec spec;
    spec.n_agents = 6;
    spec.n_clutter = 10;
    spec.area_m = 70;
    const auto synthetic = most::generate_scene(seed, spec);

    const auto config = most::config_for(spec);
    const auto result = most::tokenize(synthetic.bundle, config);

    std::cout << "points per frame: " << synthetic.bundle.frames.front().points.size() << '\n';
    if (result.plane)
        std::cout << "ground normal: (" << result.plane->normal[0] << ", " << result.plane->normal[1] << ", "
                  << result.plane->normal[2] << ")\n";
    for (auto kind : {most::ElementKind::agent, most::ElementKind::open_set, most::ElementKind::ground})
        std::cout << most::to_string(kind) << " elements: " << result.count(kind) << '\n';
    for (const auto &w : result.warnings)
        std::cout << "warning: " << w << '\n';

    auto fusion = most::fusion_config(config);
    fusion.hidden = 32;
    const auto params = most::cast_params<float>(most::init_fusion_params(fusion, seed));
    const auto tokens = most::embed(result.scene, result.image, params);

    double norm = 0.0;
    for (int d = 0; d < tokens.dim; ++d)
        norm += tokens.embeddings[static_cast<std::size_t>(d)] * tokens.embeddings[static_cast<std::size_t>(d)];
    std::cout << tokens.elements.size() << " tokens of width " << tokens.dim << "; first token norm "
              << std::sqrt(norm) << '\n';
    return 0;
}
