#pragma once

#include "gfflab/current.hpp"
#include "gfflab/errors.hpp"
#include "gfflab/experiments.hpp"
#include "gfflab/explore.hpp"
#include "gfflab/gfield.hpp"
#include "gfflab/lattice.hpp"
#include "gfflab/levelset.hpp"
#include "gfflab/loopsoup.hpp"
#include "gfflab/parallel.hpp"
#include "gfflab/repulsion.hpp"
#include "gfflab/rng.hpp"
#include "gfflab/stats.hpp"
#include "gfflab/walks.hpp"
