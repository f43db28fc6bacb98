#pragma once

#include "emf/consumption.hpp"
#include "emf/drivers.hpp"
#include "emf/equivalence.hpp"
#include "emf/io.hpp"
#include "emf/lq.hpp"
#include "emf/measures.hpp"
#include "emf/mfsde.hpp"
#include "emf/mp.hpp"
#include "emf/parallel.hpp"
#include "emf/quadrature.hpp"
#include "emf/rng.hpp"
#include "emf/time_grid.hpp"
#include "emf/version.hpp"
