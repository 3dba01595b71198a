"""Perfect clique packings in balanced multipartite graphs.

Generation of extremal and barrier instances, structural detection
(splittability, two-half rows, index-lattice obstructions), constructive
matching subroutines, a staged deletion pipeline with exact recounts, and an
exhaustive oracle for desk-scale ground truth.
"""

from .graphs import (CliquePacking, GammaGraph, MultipartiteGraph,
                     PartitionLabeling, Vertex, blow_up, build_gamma,
                     class_labeling, clique_complex_edges, complete_multipartite,
                     density, graph_from_json, graph_to_json, index_set,
                     index_vector, packing_from_json, packing_to_json,
                     partite_min_degree)
from .structure import (IntegerLattice, IterationResult, PairCompleteWitness,
                        RowDecomposition, SplitWitness, diagnose_barriers,
                        divisibility_barrier_graph, is_complete_wrt,
                        is_pair_complete, is_splittable, iterate_decomposition,
                        merge_to_minimal, min_diagonal_density,
                        robust_edge_lattice, space_barrier_graph,
                        trivial_decomposition, verify_pair_complete_witness,
                        verify_split_witness)
from .matching import (BalanceError, Configuration, ConfigurationShortfall,
                       DegreeObstruction, ObstructionError, ParityObstruction,
                       Rectangle, SearchResult, SizingObstruction,
                       SupplyObstruction, bipartite_maximum_matching,
                       bipartite_regularity, configuration_patterns,
                       even_path_between_copartners,
                       exact_balanced_clique_packing, find_configurations,
                       find_transversal, flip_balance, is_multigraphic,
                       pair_complete_balanced_matching, realize_multigraph,
                       regular_bipartite_perfect_matching)
from .oracle import (OracleVerdict, brute_force_packing, canonical_form,
                     is_isomorphic_to_gamma, random_min_degree_graph,
                     verify_theorem_boundary)
from .pipeline import (BlockAssignment, CandidateExtremal, DeletionLedger,
                       GlueResult, PipelineParams, RecountFailure, SolveResult,
                       StageFailure, balance_blocks, balance_columns,
                       balance_rows, building_block, classify_bad_vertices,
                       cover_and_divisibility, extend_clique,
                       fix_row_parity_and_matchability, glue_rows,
                       is_ij_distributed, is_properly_distributed,
                       prepare_multirow, solve)

__all__ = [name for name in dir() if not name.startswith("_")]
