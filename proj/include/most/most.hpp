#ifndef MOST_MOST_HPP
#define MOST_MOST_HPP

#include "most/compact.hpp"
#include "most/decompose.hpp"
#include "most/error.hpp"
#include "most/fuse.hpp"
#include "most/ground.hpp"
#include "most/harness.hpp"
#include "most/io.hpp"
#include "most/pipeline.hpp"
#include "most/project.hpp"
#include "most/rng.hpp"
#include "most/track.hpp"
#include "most/types.hpp"

#endif // MOST_MOST_HPP
