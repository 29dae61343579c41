from .app import create_app, run_bench, solve_request_to_response

__all__ = ["create_app", "run_bench", "solve_request_to_response"]
