"""Handlers package"""
from handlers.ablate import cmd_ablate
from handlers.export import cmd_export
from handlers.gradcheck import cmd_gradcheck
from handlers.route import cmd_route
from handlers.train import cmd_train

__all__ = [
    'cmd_ablate',
    'cmd_export',
    'cmd_gradcheck',
    'cmd_route',
    'cmd_train',
]
