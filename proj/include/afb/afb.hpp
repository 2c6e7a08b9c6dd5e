#pragma once

#include "afb/error.hpp"
#include "afb/forces.hpp"
#include "afb/graph.hpp"
#include "afb/matrix.hpp"
#include "afb/mesh.hpp"
#include "afb/models.hpp"
#include "afb/nn.hpp"
#include "afb/pipeline.hpp"
#include "afb/rng.hpp"
#include "afb/stats.hpp"
#include "afb/synthetic.hpp"
#include "afb/tape.hpp"
#include "afb/vec.hpp"
