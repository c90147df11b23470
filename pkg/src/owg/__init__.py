"""Open-world grasping orchestration engine."""
